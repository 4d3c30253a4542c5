#include "skillroute/artifact.hpp"

#include <fstream>

#include "json.hpp"
#include "skillroute/hybrid.hpp"
#include "skillroute/simulator.hpp"

namespace skillroute {

std::unique_ptr<RoutingPolicy> load_any_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_any_policy: cannot open " + path);
  const nlohmann::json j = nlohmann::json::parse(in);
  const std::string type = j.at("type").get<std::string>();
  if (type == "softmax") {
    return std::make_unique<SoftmaxPolicy>(load_policy(path));
  }
  if (type == "hybrid") {
    return std::make_unique<HybridPolicy>(load_hybrid(path));
  }
  if (type == "baseline") {
    return std::make_unique<BaselinePolicy>(j.at("top_prob").get<double>(),
                                            j.at("artifact_id").get<std::string>());
  }
  throw std::runtime_error("load_any_policy: unknown artifact type '" + type + "' in " + path);
}

}  // namespace skillroute
