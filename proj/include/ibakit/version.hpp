#pragma once

namespace ibakit {

// "ibakit <major.minor.patch>"
const char* version_string();

}  // namespace ibakit
