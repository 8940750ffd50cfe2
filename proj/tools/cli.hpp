#ifndef HARMICL_TOOLS_CLI_HPP
#define HARMICL_TOOLS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "harmicl/gateway.hpp"

namespace harmicl::cli {

// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kInvalidInput = 2;
inline constexpr int kUnreachable = 3;

struct Hooks {
  // Every network transport the CLI creates goes through this factory.
  TransportFactory transport_factory = http_transport_factory();
};

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const Hooks& hooks = {});

}  // namespace harmicl::cli

#endif  // HARMICL_TOOLS_CLI_HPP
