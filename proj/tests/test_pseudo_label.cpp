#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixclr/error.hpp"
#include "fixclr/pseudo_label.hpp"
#include "fixclr/rng.hpp"

using namespace fixclr;
using namespace fixclr::pseudo;

namespace {

Eigen::MatrixXd logits_for_probs(std::initializer_list<double> probs) {
  Eigen::MatrixXd l(1, static_cast<Eigen::Index>(probs.size()));
  Eigen::Index k = 0;
  for (double p : probs) l(0, k++) = std::log(p);
  return l;
}

ThresholdPolicy fixed(double t) {
  ThresholdPolicy p;
  p.fixed_value = t;
  return p;
}

class HalfThreshold : public ThresholdPlugin {
 public:
  std::string id() const override { return "test-half"; }
  PluginDecision decide(const Eigen::MatrixXd& logits, std::span<const Eigen::MatrixXd> history,
                        std::int64_t step) override {
    last_history = history.size();
    last_step = step;
    PluginDecision d;
    d.threshold = 0.5;
    d.weights.assign(static_cast<std::size_t>(logits.rows()), 0.25);
    return d;
  }
  std::size_t last_history = 0;
  std::int64_t last_step = -1;
};

}  // namespace

TEST_CASE("confident predictions are kept") {
  const auto b = predict_pseudo_labels(logits_for_probs({0.97, 0.03}), fixed(0.95));
  CHECK(b.predicted_class[0] == 0);
  CHECK(b.confidence[0] == doctest::Approx(0.97));
  CHECK(b.keep_mask[0]);
}

TEST_CASE("uncertain predictions are dropped") {
  const auto b = predict_pseudo_labels(logits_for_probs({0.60, 0.40}), fixed(0.95));
  CHECK(b.predicted_class[0] == 0);
  CHECK_FALSE(b.keep_mask[0]);
}

TEST_CASE("uniform logits tie toward the lowest class") {
  const Eigen::MatrixXd l = Eigen::MatrixXd::Constant(3, 10, 2.5);
  const auto b = predict_pseudo_labels(l, fixed(0.1000001));
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(b.predicted_class[s] == 0);
    CHECK(b.confidence[s] == 0.1);
    CHECK_FALSE(b.keep_mask[s]);
  }
}

TEST_CASE("non-finite logits are numeric errors") {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 3);
  l(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(predict_pseudo_labels(l, fixed(0.9)), NumericError);
  l(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(predict_pseudo_labels(l, fixed(0.9)), NumericError);
}

TEST_CASE("keep ratio") {
  PseudoLabelBatch b;
  b.predicted_class = {0, 0, 0, 0};
  b.confidence = {1, 1, 1, 1};
  b.keep_mask = {true, false, true, false};
  CHECK(keep_ratio(b) == 0.5);
  b.keep_mask = {true, true, true, true};
  CHECK(keep_ratio(b) == 1.0);
  b.keep_mask = {false, false, false, false};
  CHECK(keep_ratio(b) == 0.0);
  CHECK_THROWS_AS(keep_ratio(PseudoLabelBatch{}), DomainError);
}

TEST_CASE("pseudo-label quality") {
  PseudoLabelBatch b;
  b.predicted_class = {1, 2, 0};
  b.confidence = {1, 1, 0.2};
  b.keep_mask = {true, true, false};
  const std::vector<int> truth = {1, 3, 0};
  CHECK(pseudo_label_quality(b, truth).value() == 0.5);
  const std::vector<int> exact = {1, 2, 2};
  CHECK(pseudo_label_quality(b, exact).value() == 1.0);
  b.keep_mask = {false, false, false};
  CHECK_FALSE(pseudo_label_quality(b, truth).has_value());
}

TEST_CASE("raising the threshold never raises the keep ratio") {
  Rng rng(12);
  Eigen::MatrixXd l(200, 5);
  for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = 3.0 * rng.normal();
  double previous = 1.0;
  for (double t = 0.2; t <= 1.0; t += 0.05) {
    const auto b = predict_pseudo_labels(l, fixed(t));
    const double r = keep_ratio(b);
    CHECK(r <= previous);
    previous = r;
    for (std::size_t s = 0; s < b.size(); ++s) {
      CHECK(b.keep_mask[s] == (b.confidence[s] >= b.threshold_used));
      CHECK(b.confidence[s] >= 0.2);
      CHECK(b.confidence[s] <= 1.0);
    }
  }
}

TEST_CASE("fixed thresholds must lie in (0, 1]") {
  CHECK_THROWS_AS(fixed(0.0).validate(), ConfigError);
  CHECK_THROWS_AS(fixed(1.5).validate(), ConfigError);
  CHECK_NOTHROW(fixed(1.0).validate());
}

TEST_CASE("plugins receive history and step and set threshold and weights") {
  auto plugin = std::make_shared<HalfThreshold>();
  PluginRegistry::instance().add("test-half", [plugin] { return plugin; });
  CHECK(PluginRegistry::instance().contains("test-half"));
  CHECK_THROWS_AS(PluginRegistry::instance().create("no-such-plugin"), ConfigError);

  ThresholdPolicy p;
  p.kind = ThresholdKind::plugin;
  p.plugin_id = "test-half";
  p.plugin = PluginRegistry::instance().create("test-half");
  const std::vector<Eigen::MatrixXd> history(2, Eigen::MatrixXd::Zero(1, 2));
  const auto b = predict_pseudo_labels(logits_for_probs({0.6, 0.4}), p, history, 7);
  CHECK(b.threshold_used == 0.5);
  CHECK(b.keep_mask[0]);
  CHECK(b.weight[0] == 0.25);
  CHECK(plugin->last_history == 2u);
  CHECK(plugin->last_step == 7);
}
