#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace ditfuse {

enum class TaskTag { Fusion, Control, Seg };

enum class SubTag {
  MultiModalities,
  MultiExposure,
  MultiFocus,
  LightPlusPlus,
  LightPlus,
  LightMinus,
  LightMinusMinus,
  ContrastPlus,
  ContrastMinus,
};

inline constexpr std::array<TaskTag, 3> kAllTaskTags = {TaskTag::Fusion, TaskTag::Control, TaskTag::Seg};
inline constexpr std::array<SubTag, 9> kAllSubTags = {
    SubTag::MultiModalities, SubTag::MultiExposure, SubTag::MultiFocus,  SubTag::LightPlusPlus, SubTag::LightPlus,
    SubTag::LightMinus,      SubTag::LightMinusMinus, SubTag::ContrastPlus, SubTag::ContrastMinus,
};
inline constexpr std::array<SubTag, 3> kFusionSubTags = {SubTag::MultiModalities, SubTag::MultiExposure,
                                                         SubTag::MultiFocus};
inline constexpr std::array<SubTag, 6> kControlSubTags = {SubTag::LightPlusPlus,   SubTag::LightPlus,
                                                          SubTag::LightMinus,      SubTag::LightMinusMinus,
                                                          SubTag::ContrastPlus,    SubTag::ContrastMinus};

/// Bare tag name as it appears in manifests, e.g. "FUSION".
std::string_view tag_name(TaskTag tag);
/// Bare subtag name, e.g. "LIGHT+".
std::string_view tag_name(SubTag tag);
/// Bracketed token form, e.g. "[FUSION]".
std::string_view tag_token(TaskTag tag);
/// Angle-bracket token form, e.g. "<LIGHT+>".
std::string_view tag_token(SubTag tag);

std::optional<TaskTag> task_from_name(std::string_view name);
std::optional<SubTag> subtag_from_name(std::string_view name);

bool is_control(SubTag tag);
bool is_fusion(SubTag tag);

/// Whether a (task, subtask) pair is a legal prompt prefix.
bool valid_tag_combination(std::optional<TaskTag> task, std::optional<SubTag> sub);

}  // namespace ditfuse
