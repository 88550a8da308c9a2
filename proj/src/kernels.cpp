#include "drivesac/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace drivesac::kernels {

const Ops* scalar_ops();
#if defined(__x86_64__)
const Ops* avx2_ops();
const Ops* avx512_ops();
#endif

std::vector<const Ops*> available() {
  std::vector<const Ops*> lanes{scalar_ops()};
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    lanes.push_back(avx2_ops());
  if (__builtin_cpu_supports("avx512f")) lanes.push_back(avx512_ops());
#endif
  return lanes;
}

const Ops* find(std::string_view name) {
  for (const Ops* ops : available())
    if (name == ops->name) return ops;
  return nullptr;
}

namespace {

std::atomic<const Ops*> g_active{nullptr};

const Ops* pick_default() {
  if (const char* env = std::getenv("DRIVESAC_KERNELS")) {
    const Ops* ops = find(env);
    if (!ops)
      throw std::runtime_error(std::string("DRIVESAC_KERNELS names an unsupported lane: ") + env);
    return ops;
  }
  return available().back();  // lanes are ordered narrowest to widest
}

}  // namespace

const Ops& active() {
  const Ops* ops = g_active.load(std::memory_order_acquire);
  if (!ops) {
    ops = pick_default();
    g_active.store(ops, std::memory_order_release);
  }
  return *ops;
}

void set_active(const Ops* ops) {
  g_active.store(ops ? ops : pick_default(), std::memory_order_release);
}

}  // namespace drivesac::kernels
