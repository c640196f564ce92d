#include "otr/parallel.hpp"

namespace otr {

namespace {
std::atomic<unsigned> g_thread_count{std::max(1u, std::thread::hardware_concurrency())};
}

void set_thread_count(unsigned count) { g_thread_count = std::max(1u, count); }

unsigned thread_count() { return g_thread_count; }

namespace detail {
bool& in_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

}  // namespace otr
