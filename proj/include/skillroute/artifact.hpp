#pragma once

#include <memory>
#include <string>

#include "skillroute/policy.hpp"

namespace skillroute {

// Loads any policy artifact (softmax, hybrid, baseline) by its "type" tag.
std::unique_ptr<RoutingPolicy> load_any_policy(const std::string& path);

}  // namespace skillroute
