#include "sfa/hsi/label_guard.hpp"

#include <atomic>
#include <mutex>

namespace sfa::hsi {

namespace {

std::atomic<int> g_firewalls{0};
std::mutex g_hook_mutex;
std::function<void(const std::string&)> g_hook;

}  // namespace

TrainingLabelFirewall::TrainingLabelFirewall() { g_firewalls.fetch_add(1); }
TrainingLabelFirewall::~TrainingLabelFirewall() { g_firewalls.fetch_sub(1); }
bool TrainingLabelFirewall::active() { return g_firewalls.load() > 0; }

void set_held_out_tripwire(std::function<void(const std::string&)> hook) {
    std::lock_guard lock(g_hook_mutex);
    g_hook = std::move(hook);
}

void check_held_out_access(const std::string& sample_id) {
    {
        std::lock_guard lock(g_hook_mutex);
        if (g_hook) {
            g_hook(sample_id);
        }
    }
    if (TrainingLabelFirewall::active()) {
        throw HeldOutLabelAccess("held-out labels of sample '" + sample_id + "' read during training");
    }
}

}  // namespace sfa::hsi
