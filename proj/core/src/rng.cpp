#include "ditfuse/rng.hpp"

#include <sstream>

#include "ditfuse/error.hpp"

namespace ditfuse {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& blob) {
  std::istringstream is(blob);
  Rng rng;
  is >> rng.seed_ >> rng.engine_;
  if (!is) fail(ErrorCode::IoError, "corrupt rng state");
  return rng;
}

}  // namespace ditfuse
