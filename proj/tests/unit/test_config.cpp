#include <map>

#include "doctest.h"
#include "urbanflow/config.hpp"
#include "urbanflow/errors.hpp"

using namespace urbanflow;

TEST_CASE("defaults mirror the library structs") {
  Config c;
  CHECK(domain_spec(c) == DomainSpec{});
  const auto f = flow_config(c);
  CHECK(f.tau == FlowConfig{}.tau);
  CHECK(f.max_steps == FlowConfig{}.max_steps);
  CHECK(f.convergence_tol == FlowConfig{}.convergence_tol);
  const auto s = scene_params(c);
  CHECK(s.count_max == SceneParams{}.count_max);
  CHECK(s.height.median == SceneParams{}.height.median);
  const auto m = model_config(c, Direction::Reverse);
  CHECK(m.levels == 4);
  CHECK(m.in_channels == 3);
  const auto t = train_config(c, Direction::Forward);
  CHECK(t.learning_rate == 1e-3);
  CHECK(t.batch_size == 4);
  CHECK(dataset_spec(c).count == 200);
}

TEST_CASE("file syntax") {
  Config c;
  c.load_text(R"(# desk run
threads = 2
[flow]
tau = 0.9   # relaxation
ground_no_slip = false
[train]
loss = "bce"
[service]
host = "0.0.0.0"
)");
  CHECK(c.get_int("threads") == 2);
  CHECK(c.get_float("flow.tau") == 0.9);
  CHECK_FALSE(c.get_bool("flow.ground_no_slip"));
  CHECK(c.get_string("train.loss") == "bce");
  CHECK(c.get_string("service.host") == "0.0.0.0");
  CHECK(c.is_default("flow.max_steps"));
  CHECK_FALSE(c.is_default("flow.tau"));

  // round trip through the text form
  Config d;
  d.load_text(c.to_text());
  CHECK(d.to_json() == c.to_json());
}

TEST_CASE("errors name the offending key and line") {
  Config c;
  auto msg = [&](const std::string& text) {
    try {
      Config x;
      x.load_text(text, "run.toml");
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(msg("flow.tau = fast\n").find("flow.tau") != std::string::npos);
  CHECK(msg("\n\nbogus = 1\n").find("run.toml:3") != std::string::npos);
  CHECK(msg("\n\nbogus = 1\n").find("bogus") != std::string::npos);
  CHECK(msg("[flow\n").find("section") != std::string::npos);
  CHECK(msg("threads 3\n").find("key = value") != std::string::npos);
  CHECK(msg("threads = 1.5\n").find("integer") != std::string::npos);

  CHECK_THROWS_AS(c.apply_override("nokey"), ValidationError);
  CHECK_THROWS_AS(c.apply_override("flow.tau=abc"), ValidationError);
  c.apply_override("flow.tau=0.7");
  CHECK(c.get_float("flow.tau") == 0.7);

  // semantic validation happens in the builders
  c.apply_override("flow.tau=0.4");
  CHECK_THROWS_AS(flow_config(c), ValidationError);
  Config t;
  t.apply_override("train.loss=l2");
  CHECK_THROWS_AS(train_config(t, Direction::Reverse), ValidationError);
}

TEST_CASE("environment overrides") {
  std::map<std::string, std::string> env{{"URBANFLOW_SERVICE_PORT", "9001"},
                                         {"URBANFLOW_SERVICE_FORWARD_CHECKPOINT", "/m/f.ckp"},
                                         {"URBANFLOW_FLOW_TAU", "0.6"}};
  auto get = [&](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    if (it == env.end()) return std::nullopt;
    return it->second;
  };
  Config c;
  c.apply_env("service.", get);
  CHECK(c.get_int("service.port") == 9001);
  CHECK(c.get_string("service.forward_checkpoint") == "/m/f.ckp");
  CHECK(c.get_float("flow.tau") == 0.8);  // outside the prefix

  env["URBANFLOW_SERVICE_PORT"] = "http";
  CHECK_THROWS_WITH_AS(c.apply_env("service.", get), doctest::Contains("URBANFLOW_SERVICE_PORT"),
                       ValidationError);
}
