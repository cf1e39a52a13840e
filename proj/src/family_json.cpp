#include "belieflab/family_json.hpp"

namespace belieflab::envs {

nlohmann::json to_json(const FamilyConfig& c) {
  return {
      {"family", c.family.id()},
      {"episode_length", c.episode_length},
      {"gamma", c.gamma},
      {"arm_levels", c.arm_levels},
      {"arm_stay", c.arm_stay},
      {"tiger_stay", c.tiger_stay},
      {"listen_reward", c.listen_reward},
      {"tiger_reward", c.tiger_reward},
      {"treasure_reward", c.treasure_reward},
      {"oracle_targets", c.oracle_targets},
      {"target_payout", c.target_payout},
      {"other_payout", c.other_payout},
      {"cart",
       {{"x_min", c.cart.x_min},
        {"x_max", c.cart.x_max},
        {"v_min", c.cart.v_min},
        {"v_max", c.cart.v_max},
        {"dt", c.cart.dt},
        {"sigma", c.cart.sigma}}},
  };
}

FamilyConfig family_config_from_json(const nlohmann::json& j) {
  FamilyConfig c = FamilyConfig::defaults(TaskFamily::parse(j.at("family").get<std::string>()));
  auto read = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("episode_length", c.episode_length);
  read("gamma", c.gamma);
  read("arm_levels", c.arm_levels);
  read("arm_stay", c.arm_stay);
  read("tiger_stay", c.tiger_stay);
  read("listen_reward", c.listen_reward);
  read("tiger_reward", c.tiger_reward);
  read("treasure_reward", c.treasure_reward);
  read("oracle_targets", c.oracle_targets);
  read("target_payout", c.target_payout);
  read("other_payout", c.other_payout);
  if (j.contains("cart")) {
    const auto& k = j.at("cart");
    auto cart_read = [&k](const char* key, double& field) {
      if (k.contains(key)) k.at(key).get_to(field);
    };
    cart_read("x_min", c.cart.x_min);
    cart_read("x_max", c.cart.x_max);
    cart_read("v_min", c.cart.v_min);
    cart_read("v_max", c.cart.v_max);
    cart_read("dt", c.cart.dt);
    cart_read("sigma", c.cart.sigma);
  }
  if (c.episode_length < 1) throw std::invalid_argument("episode_length must be positive");
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  for (int target : c.oracle_targets) {
    if (target < 1 || target > 10) throw std::invalid_argument("oracle targets must lie in 1..10");
  }
  if (c.oracle_targets.empty()) throw std::invalid_argument("oracle_targets must not be empty");
  return c;
}

}  // namespace belieflab::envs
