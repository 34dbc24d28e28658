#include "ibakit/version.hpp"

namespace ibakit {

const char* version_string() { return "ibakit " IBAKIT_VERSION; }

}  // namespace ibakit
