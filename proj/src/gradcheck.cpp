#include "chebyodo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <utility>

#include "chebyodo/backbone.hpp"
#include "chebyodo/chebykan.hpp"
#include "chebyodo/eksa.hpp"
#include "chebyodo/errors.hpp"
#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"
#include "chebyodo/training.hpp"

namespace chebyodo {
namespace {

constexpr double kStepH = 1e-5;
constexpr int kMaxCoords = 24;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

Tensor random_param(Shape shape, Rng& rng, double scale) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> values(n);
  for (double& v : values) v = scale * rng.gaussian();
  return Tensor::param(std::move(shape), std::move(values));
}

// One family instance: the named tensors to verify (parameters plus the layer
// input) and a scalar-loss forward pass that rebuilds the graph from their
// current values. Run under an active tape it supports backward; run without
// a tape it is the plain re-evaluation finite differences need.
struct FamilyCase {
  std::string family;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::function<Tensor()> loss;
};

// Fixed random mixing weights so every output coordinate influences the loss.
Tensor make_mixer(const Tensor& like, Rng& rng) {
  std::vector<double> values(like.size());
  for (double& v : values) v = rng.gaussian();
  return Tensor::from(like.shape(), std::move(values));
}

Tensor mixed_sum(Tensor y, const Tensor& mixer) {
  return reduce_sum(reduce_sum(mul(std::move(y), mixer), 1), 0);
}

FamilyCase make_chebykan_case(Rng& rng) {
  ChebyKANConfig config;
  config.in_channels = 6;
  config.out_channels = 8;
  config.groups = 2;
  config.degree = 3;
  config.kernel_size = 3;
  config.stride = 2;
  config.padding = 1;
  auto layer = std::make_shared<ChebyKANLayer>(ChebyKANLayer::init(config, rng));
  Tensor x = random_param({6, 17}, rng, 0.7);
  Tensor mixer = make_mixer(chebykan_forward(*layer, x), rng);

  FamilyCase fc;
  fc.family = "chebykan";
  fc.tensors = layer->parameters("chebykan");
  fc.tensors.emplace_back("chebykan.input", x);
  fc.loss = [layer, x, mixer] { return mixed_sum(chebykan_forward(*layer, x), mixer); };
  return fc;
}

FamilyCase make_resblock_case(Rng& rng) {
  auto block = std::make_shared<ResBlock>(
      ResBlock::init(/*in=*/6, /*out=*/8, /*stride=*/2, /*degree=*/2, /*groups=*/1,
                     /*kernel=*/3, rng));
  Tensor x = random_param({6, 16}, rng, 0.7);
  Tensor mixer = make_mixer(resblock_forward(*block, x), rng);

  FamilyCase fc;
  fc.family = "resblock";
  fc.tensors = block->parameters("resblock");
  fc.tensors.emplace_back("resblock.input", x);
  fc.loss = [block, x, mixer] { return mixed_sum(resblock_forward(*block, x), mixer); };
  return fc;
}

FamilyCase make_eksa_case(Rng& rng, bool normalize_output) {
  EksaConfig config;
  config.feature_dim = 10;
  config.seq_len = 7;
  config.taylor_order = 2;
  config.sigma = 1.0;
  config.normalize_output = normalize_output;
  auto layer = std::make_shared<EksaLayer>(EksaLayer::init(config, rng));
  Tensor x = random_param({10, 7}, rng, 0.7);
  Tensor mixer = make_mixer(eksa_forward(*layer, x), rng);

  FamilyCase fc;
  fc.family = normalize_output ? "eksa_normalized" : "eksa_raw";
  fc.tensors = layer->parameters(fc.family);
  fc.tensors.emplace_back(fc.family + ".input", x);
  fc.loss = [layer, x, mixer] { return mixed_sum(eksa_forward(*layer, x), mixer); };
  return fc;
}

FamilyCase make_head_case(Rng& rng) {
  auto head = std::make_shared<Head>(Head::init(/*in_width=*/6, {8, 5, 2}, rng));
  Tensor x = random_param({6, 4}, rng, 0.7);
  Tensor mixer = make_mixer(head_forward(*head, x), rng);

  FamilyCase fc;
  fc.family = "head";
  fc.tensors = head->parameters("head");
  fc.tensors.emplace_back("head.input", x);
  fc.loss = [head, x, mixer] { return mixed_sum(head_forward(*head, x), mixer); };
  return fc;
}

}  // namespace

bool GradCheckReport::all_pass() const {
  for (const GradCheckRow& row : rows) {
    if (!row.pass) return false;
  }
  return !rows.empty();
}

const std::vector<std::string>& gradcheck_families() {
  static const std::vector<std::string> names = {"chebykan", "resblock", "eksa_normalized",
                                                 "eksa_raw", "head"};
  return names;
}

GradCheckReport run_gradcheck(double tolerance, const std::string& inject_fault) {
  if (!inject_fault.empty()) {
    const auto& names = gradcheck_families();
    if (std::find(names.begin(), names.end(), inject_fault) == names.end()) {
      std::string expected;
      for (const std::string& name : names) {
        if (!expected.empty()) expected += ", ";
        expected += name;
      }
      throw ContractError("inject-fault: unknown family '" + inject_fault +
                          "' (expected one of " + expected + ")");
    }
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  Rng init_rng(0x9e3779b97f4a7c15ull);

  std::vector<FamilyCase> cases;
  cases.push_back(make_chebykan_case(init_rng));
  cases.push_back(make_resblock_case(init_rng));
  cases.push_back(make_eksa_case(init_rng, true));
  cases.push_back(make_eksa_case(init_rng, false));
  cases.push_back(make_head_case(init_rng));

  Rng coord_rng(1234);
  for (FamilyCase& fc : cases) {
    // Analytic gradients: one forward/backward pass under an active tape.
    for (auto& [name, tensor] : fc.tensors) tensor.zero_grad();
    {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor loss = fc.loss();
      backward(loss);
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(fc.tensors.size());
    for (auto& [name, tensor] : fc.tensors) {
      tensor.ensure_grad();
      grads.push_back(tensor.grad());
    }

    if (fc.family == inject_fault && !grads.empty()) {
      // Stand-in for a wrong backward rule in this family's first recorded
      // op: every entry of its weight gradient goes wrong, so the sampled
      // finite-difference comparison below must flag it.
      for (double& g : grads.front()) g += 0.5 + std::abs(g);
    }

    for (std::size_t ti = 0; ti < fc.tensors.size(); ++ti) {
      Tensor& tensor = fc.tensors[ti].second;
      const std::vector<double>& ad = grads[ti];

      GradCheckRow row;
      row.family = fc.family;
      row.tensor = fc.tensors[ti].first;

      const std::size_t n = tensor.size();
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      if (n > static_cast<std::size_t>(kMaxCoords)) {
        for (int i = 0; i < kMaxCoords; ++i) {
          const std::size_t j =
              static_cast<std::size_t>(i) + coord_rng.next_u64() % (n - static_cast<std::size_t>(i));
          std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        }
        idx.resize(static_cast<std::size_t>(kMaxCoords));
      }
      for (const std::size_t ci : idx) {
        double& slot = tensor.vec()[ci];
        const double keep = slot;
        slot = keep + kStepH;
        const double fp = fc.loss().item();
        slot = keep - kStepH;
        const double fm = fc.loss().item();
        slot = keep;
        const double fd = (fp - fm) / (2.0 * kStepH);
        row.max_rel_err = std::max(row.max_rel_err, rel_err(fd, ad[ci]));
        ++row.coords;
      }
      row.pass = row.max_rel_err < tolerance;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void print_gradcheck_report(const GradCheckReport& report, std::ostream& out) {
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %-36s %7s %13s %s", "family", "tensor", "coords",
                "max_rel_err", "status");
  out << line << '\n';
  int failures = 0;
  for (const GradCheckRow& row : report.rows) {
    std::snprintf(line, sizeof line, "%-16s %-36s %7d %13.3e %s", row.family.c_str(),
                  row.tensor.c_str(), row.coords, row.max_rel_err,
                  row.pass ? "ok" : "FAIL");
    out << line << '\n';
    if (!row.pass) ++failures;
  }
  if (report.all_pass()) {
    out << "gradcheck: PASS (" << report.rows.size() << " tensors, tolerance "
        << report.tolerance << ")\n";
  } else {
    out << "gradcheck: FAIL (" << failures << " of " << report.rows.size()
        << " tensors exceeded tolerance " << report.tolerance << ")\n";
  }
}

}  // namespace chebyodo
