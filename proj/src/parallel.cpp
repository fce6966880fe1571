#include "edgerace/parallel.hpp"

#include <cstdlib>
#include <string>

namespace edgerace {

std::size_t default_threads() {
    if (const char* env = std::getenv("EDGERACE_THREADS")) {
        try {
            long value = std::stol(env);
            if (value >= 1) return static_cast<std::size_t>(value);
        } catch (const std::exception&) {
        }
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace edgerace
