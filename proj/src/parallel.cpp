#include "fairspec/parallel.hpp"

#include <atomic>

namespace fairspec {

namespace {
std::atomic<int> g_max_threads{std::max(1, static_cast<int>(std::thread::hardware_concurrency()))};
}

void set_max_threads(int n) { g_max_threads = std::max(1, n); }
int max_threads() { return g_max_threads; }

}  // namespace fairspec
