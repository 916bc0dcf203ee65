#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace sdn {

// Invalid configuration: bad shapes, bad parameter values, malformed files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: calls that violate a documented precondition or call order.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {
template <class E, class... Parts>
[[noreturn]] void throw_error(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw E(os.str());
}
}  // namespace detail

}  // namespace sdn

#define SDN_CHECK_CONFIG(cond, ...)                                   \
  do {                                                                \
    if (!(cond)) sdn::detail::throw_error<sdn::ConfigError>(__VA_ARGS__); \
  } while (0)

#define SDN_CHECK_USAGE(cond, ...)                                    \
  do {                                                                \
    if (!(cond)) sdn::detail::throw_error<sdn::UsageError>(__VA_ARGS__); \
  } while (0)
