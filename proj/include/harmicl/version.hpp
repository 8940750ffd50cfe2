#ifndef HARMICL_VERSION_HPP
#define HARMICL_VERSION_HPP

namespace harmicl {
inline constexpr const char* kArtifactVersion = "0.1.0";
}

#endif  // HARMICL_VERSION_HPP
