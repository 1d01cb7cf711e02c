#include "ditfuse/tags.hpp"

#include <algorithm>

namespace ditfuse {

std::string_view tag_name(TaskTag tag) {
  switch (tag) {
    case TaskTag::Fusion: return "FUSION";
    case TaskTag::Control: return "CONTROL";
    case TaskTag::Seg: return "SEG";
  }
  return "";
}

std::string_view tag_name(SubTag tag) {
  switch (tag) {
    case SubTag::MultiModalities: return "MULTI-MODALITIES";
    case SubTag::MultiExposure: return "MULTI-EXPOSURE";
    case SubTag::MultiFocus: return "MULTI-FOCUS";
    case SubTag::LightPlusPlus: return "LIGHT++";
    case SubTag::LightPlus: return "LIGHT+";
    case SubTag::LightMinus: return "LIGHT-";
    case SubTag::LightMinusMinus: return "LIGHT--";
    case SubTag::ContrastPlus: return "CONTRAST+";
    case SubTag::ContrastMinus: return "CONTRAST-";
  }
  return "";
}

std::string_view tag_token(TaskTag tag) {
  switch (tag) {
    case TaskTag::Fusion: return "[FUSION]";
    case TaskTag::Control: return "[CONTROL]";
    case TaskTag::Seg: return "[SEG]";
  }
  return "";
}

std::string_view tag_token(SubTag tag) {
  switch (tag) {
    case SubTag::MultiModalities: return "<MULTI-MODALITIES>";
    case SubTag::MultiExposure: return "<MULTI-EXPOSURE>";
    case SubTag::MultiFocus: return "<MULTI-FOCUS>";
    case SubTag::LightPlusPlus: return "<LIGHT++>";
    case SubTag::LightPlus: return "<LIGHT+>";
    case SubTag::LightMinus: return "<LIGHT->";
    case SubTag::LightMinusMinus: return "<LIGHT-->";
    case SubTag::ContrastPlus: return "<CONTRAST+>";
    case SubTag::ContrastMinus: return "<CONTRAST->";
  }
  return "";
}

std::optional<TaskTag> task_from_name(std::string_view name) {
  for (auto t : kAllTaskTags)
    if (tag_name(t) == name) return t;
  return std::nullopt;
}

std::optional<SubTag> subtag_from_name(std::string_view name) {
  for (auto t : kAllSubTags)
    if (tag_name(t) == name) return t;
  return std::nullopt;
}

bool is_control(SubTag tag) {
  return std::find(kControlSubTags.begin(), kControlSubTags.end(), tag) != kControlSubTags.end();
}

bool is_fusion(SubTag tag) {
  return std::find(kFusionSubTags.begin(), kFusionSubTags.end(), tag) != kFusionSubTags.end();
}

bool valid_tag_combination(std::optional<TaskTag> task, std::optional<SubTag> sub) {
  if (!task) return !sub;
  switch (*task) {
    case TaskTag::Fusion: return !sub || is_fusion(*sub);  // bare [FUSION] marks M3 samples
    case TaskTag::Control: return sub && is_control(*sub);
    case TaskTag::Seg: return !sub;
  }
  return false;
}

}  // namespace ditfuse
