#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace sfa::hsi {

// Raised when held-out (target-domain) labels are touched while training is active.
class HeldOutLabelAccess : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// While at least one firewall is alive, any read of held-out labels throws.
// Process-wide so that loader threads are covered too.
class TrainingLabelFirewall {
public:
    TrainingLabelFirewall();
    ~TrainingLabelFirewall();
    TrainingLabelFirewall(const TrainingLabelFirewall&) = delete;
    TrainingLabelFirewall& operator=(const TrainingLabelFirewall&) = delete;

    static bool active();
};

// Test hook invoked on every held-out label read, inside or outside training.
// Pass an empty function to clear.
void set_held_out_tripwire(std::function<void(const std::string& sample_id)> hook);

// Called by label accessors; notifies the tripwire, then throws if a firewall is up.
void check_held_out_access(const std::string& sample_id);

}  // namespace sfa::hsi
