// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion followed
// by indented detail lines, and exits non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Eigenvalues>

#include "gap/checkpoint.hpp"
#include "gap/dataset.hpp"
#include "gap/eval.hpp"
#include "gap/gradcheck.hpp"
#include "gap/layers.hpp"
#include "gap/losses.hpp"
#include "gap/skeleton.hpp"
#include "gap/synthetic.hpp"
#include "gap/textbank.hpp"
#include "gap/train.hpp"

namespace fs = std::filesystem;
using namespace gap;

namespace {

// Tolerances and thresholds.
constexpr std::size_t kGradcheckSeeds = 20;
constexpr double kGradcheckTolerance = 1e-5;
constexpr double kGradcheckBudgetSeconds = 120.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kScaleTol = 1e-9;
constexpr double kOracleTol = 1e-12;
constexpr std::size_t kOracleInstances = 50;
constexpr double kSpectrumSlack = 1e-9;
constexpr double kGapSoftMargin = 0.005;
constexpr double kImprovementBudgetSeconds = 15.0 * 60.0;
constexpr double kTrainAccTarget = 0.95;
constexpr int kTrainAccSeedsNeeded = 4;
constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};
constexpr std::size_t kTextDim = 64;

struct Outcome {
  bool pass = false;
  std::string title;
  std::vector<std::string> details;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt("%s%.4f", s.empty() ? "" : " ", x);
  return s;
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_integrity() {
  Outcome o{false, "gradient integrity (fp64 central differences)", {}};
  GradcheckOptions opt;
  opt.seeds = kGradcheckSeeds;
  opt.tolerance = kGradcheckTolerance;
  const auto report = gradcheck_suite(opt);
  double worst = 0.0;
  for (const auto& c : report.cases) {
    if (!c.expect_failure) worst = std::max(worst, c.max_rel_error);
    if (!c.passed) o.details.push_back("failed case " + c.name + fmt(" rel err %.3e", c.max_rel_error));
  }
  o.pass = report.passed() && report.seconds < kGradcheckBudgetSeconds;
  o.details.push_back(fmt("%zu cases x %zu seeds, worst rel err %.3e (< %.0e), %.1f s (< %.0f s)", report.cases.size(),
                          kGradcheckSeeds, worst, kGradcheckTolerance, report.seconds, kGradcheckBudgetSeconds));
  return o;
}

// --- 2 ----------------------------------------------------------------------

Tensor<double> random_gauss(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n;
  for (auto& v : t.values()) v = n(rng);
  return t;
}

Tensor<double> random_rows(std::size_t b, std::mt19937_64& rng) {
  Tensor<double> p({b, b});
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < b; ++j) s += p.at(i, j) = u(rng);
    for (std::size_t j = 0; j < b; ++j) p.at(i, j) /= s;
  }
  return p;
}

Outcome loss_identities() {
  using loss::ContrastVariant;
  Outcome o{true, "loss identities", {}};
  std::mt19937_64 rng(2024);
  double max_self = 0.0, max_asym = 0.0, max_jsd = 0.0, max_ce = 0.0, max_scale = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng() % 16;
    std::vector<std::uint32_t> labels(b);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng() % 5);
    const auto y = loss::build_targets<double>(labels);
    max_self = std::max({max_self, std::abs(loss::contrastive_loss(y, y, y, ContrastVariant::KLD)),
                         std::abs(loss::contrastive_loss(y, y, y, ContrastVariant::JSD))});

    const auto p = random_rows(b, rng), q = random_rows(b, rng);
    max_asym = std::max(max_asym, std::abs(loss::contrastive_loss(p, p, q, ContrastVariant::JSD) -
                                           loss::contrastive_loss(q, q, p, ContrastVariant::JSD)));
    for (std::size_t i = 0; i < b; ++i) {
      // One row at a time: the per-row bound.
      Tensor<double> pi({1, b}), yi({1, b});
      for (std::size_t j = 0; j < b; ++j) pi.at(0, j) = p.at(i, j), yi.at(0, j) = y.at(i, j);
      max_jsd = std::max(max_jsd, loss::contrastive_loss(pi, pi, yi, ContrastVariant::JSD));
    }

    const std::size_t c = 2 + rng() % 20;
    Tensor<double> logits({b, c}, std::normal_distribution<double>(0.0, 5.0)(rng));
    std::vector<std::uint32_t> ce_labels(b);
    for (auto& l : ce_labels) l = static_cast<std::uint32_t>(rng() % c);
    max_ce = std::max(max_ce, std::abs(loss::cross_entropy(logits, ce_labels).value - std::log(double(c))));

    const std::size_t d = 2 + rng() % 12;
    const auto s = random_gauss({b, d}, rng), t = random_gauss({b, d}, rng);
    const double k = std::exp(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
    auto s2 = s, t2 = t;
    for (auto& v : s2.values()) v *= k;
    for (auto& v : t2.values()) v *= k;
    for (auto variant : {ContrastVariant::KLD, ContrastVariant::CL, ContrastVariant::JSD}) {
      const double a = loss::contrastive_feature_loss(s, t, labels, 0.1, variant).value;
      const double bb = loss::contrastive_feature_loss(s2, t2, labels, 0.1, variant).value;
      max_scale = std::max(max_scale, std::abs(a - bb));
    }
  }
  const double ln2 = std::numbers::ln2;
  o.pass = max_self <= kIdentityTol && max_asym <= kIdentityTol && max_jsd <= ln2 + kIdentityTol &&
           max_ce <= kIdentityTol && max_scale <= kScaleTol;
  o.details.push_back(fmt("max |KLD(y,y)|,|JSD(y,y)| = %.2e (<= %.0e)", max_self, kIdentityTol));
  o.details.push_back(fmt("max JSD asymmetry = %.2e, max per-row JSD = %.6f (ln 2 = %.6f)", max_asym, max_jsd, ln2));
  o.details.push_back(fmt("max |CE(uniform) - ln C| = %.2e (<= %.0e)", max_ce, kIdentityTol));
  o.details.push_back(fmt("max change under feature scaling = %.2e (<= %.0e)", max_scale, kScaleTol));
  return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome graph_conv_correctness() {
  Outcome o{true, "graph convolution oracle and adjacency spectrum", {}};
  std::mt19937_64 rng(77);
  double worst = 0.0, lo = 0.0, hi = 0.0;
  std::size_t graphs = 0;
  auto check_spectrum = [&](const std::vector<double>& a, std::size_t n) {
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(long(i), long(j)) = a[i * n + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    lo = std::min(lo, es.eigenvalues().minCoeff());
    hi = std::max(hi, es.eigenvalues().maxCoeff());
    ++graphs;
  };
  for (std::size_t trial = 0; trial < kOracleInstances; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<Edge> edges;
    for (std::size_t j = 1; j < n; ++j) edges.emplace_back(int(rng() % j), int(j));
    for (std::size_t extra = rng() % 4; extra > 0 && n > 2; --extra) {
      const int a = int(rng() % n), b = int(rng() % n);
      if (a != b) edges.emplace_back(a, b);
    }
    const auto adj = normalize_adjacency(edges, n);
    check_spectrum(adj, n);
    const Tensor<double> a({n, n}, adj);
    const std::size_t B = 1 + rng() % 3, Fi = 1 + rng() % 4, Fo = 1 + rng() % 4, T = 1 + rng() % 5;
    const auto x = random_gauss({B, Fi, T, n}, rng);
    const auto w = random_gauss({Fi, Fo}, rng);
    const auto y = nn::graph_conv_forward(x, a, w);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < Fo; ++f)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t v = 0; v < n; ++v) {
            double s = 0.0;
            for (std::size_t u = 0; u < n; ++u)
              for (std::size_t i = 0; i < Fi; ++i) s += a.at(v, u) * x.at(b, i, t, u) * w.at(i, f);
            worst = std::max(worst, std::abs(s - y.at(b, f, t, v)));
          }
  }
  for (const auto& name : shipped_skeleton_names()) {
    const auto& g = shipped_skeleton(name);
    check_spectrum(g.adjacency_norm(), g.num_joints());
  }
  o.pass = worst <= kOracleTol && lo >= -1.0 - kSpectrumSlack && hi <= 1.0 + kSpectrumSlack;
  o.details.push_back(fmt("%zu random instances, max |oracle - forward| = %.2e (<= %.0e)", kOracleInstances, worst,
                          kOracleTol));
  o.details.push_back(fmt("%zu adjacencies, eigenvalues in [%.6f, %.12f]", graphs, lo, hi));
  return o;
}

// --- 4 to 8 -----------------------------------------------------------------

struct Workbench {
  SyntheticDataset data;
  TextFeatureBank bank;
  const SkeletonGraph* graph;
  std::map<std::string, std::pair<SkeletonBatch, SkeletonBatch>> modalities;

  const std::pair<SkeletonBatch, SkeletonBatch>& split(const std::string& modality) {
    auto it = modalities.find(modality);
    if (it == modalities.end()) {
      const auto m = parse_modality(modality);
      it = modalities
               .emplace(modality, std::make_pair(derive_modality(data.train, *graph, m),
                                                 derive_modality(data.test, *graph, m)))
               .first;
    }
    return it->second;
  }
};

struct Run {
  TrainReport report;
  ScoreTable test_scores;
  std::vector<float> weights;
};

std::vector<float> flat_weights(const EncoderModel<float>& m) {
  std::vector<float> out;
  m.for_each_parameter([&](const std::string&, const Tensor<float>& v, const Tensor<float>&, bool) {
    out.insert(out.end(), v.values().begin(), v.values().end());
  });
  return out;
}

Run run_training(Workbench& wb, TrainConfig cfg, const std::string& modality = "joint") {
  cfg.modality = modality;
  const auto& [train_set, test_set] = wb.split(modality);
  Run r;
  auto model = train(train_set, &test_set, &wb.bank, cfg, &r.report);
  r.test_scores = score_batch(model, test_set);
  r.weights = flat_weights(model);
  std::printf("  . %-8s %-4s %-12s seed %llu: train %.4f test %.4f (%.1f s)\n", r.report.mode.c_str(),
              r.report.variant.c_str(), modality.c_str(), static_cast<unsigned long long>(cfg.seed),
              r.report.final_train_acc, *r.report.final_test_acc, r.report.wall_seconds);
  std::fflush(stdout);
  return r;
}

TrainConfig default_config(TrainMode mode, loss::ContrastVariant variant, std::uint64_t seed) {
  TrainConfig c = TrainConfig::desk_preset();
  c.mode = mode;
  c.variant = variant;
  c.seed = seed;
  return c;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_trajectory(const TrainReport& a, const TrainReport& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    if (std::memcmp(&a.epochs[e].loss, &b.epochs[e].loss, sizeof(double)) != 0) return false;
    if (std::memcmp(&a.epochs[e].acc, &b.epochs[e].acc, sizeof(double)) != 0) return false;
  }
  return true;
}

Outcome determinism_and_serialization(Workbench& wb) {
  Outcome o{true, "determinism and bit-exact serialization", {}};
  TrainConfig cfg = TrainConfig::desk_preset();
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.decay_epochs = {3};
  cfg.seed = 11;
  const auto& [train_set, test_set] = wb.split("joint");
  auto a = train(train_set, nullptr, &wb.bank, cfg, nullptr);
  auto b = train(train_set, nullptr, &wb.bank, cfg, nullptr);
  const bool weights_equal = same_bits(flat_weights(a), flat_weights(b));
  o.details.push_back(std::string("same seed, two runs: final weights ") + (weights_equal ? "identical" : "DIFFER"));

  const fs::path dir = fs::temp_directory_path() / ("gap_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  save_dataset(wb.data.train, dir / "train");
  const auto ds = load_dataset(dir / "train");
  const bool data_equal = ds.data.shape() == wb.data.train.data.shape() &&
                          std::memcmp(ds.data.data(), wb.data.train.data.data(), ds.data.size() * 4) == 0 &&
                          ds.labels == wb.data.train.labels;
  save_bank(wb.bank, dir / "bank.json");
  const bool bank_equal = load_bank(dir / "bank.json") == wb.bank;
  save_checkpoint(a, dir / "checkpoint");
  auto restored = load_checkpoint(dir / "checkpoint");
  bool ckpt_equal = same_bits(flat_weights(restored), flat_weights(a));
  const auto fa = predict_logits(a, test_set), fb = predict_logits(restored, test_set);
  ckpt_equal = ckpt_equal && std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(float)) == 0;
  fs::remove_all(dir);
  o.details.push_back(fmt("round trips: dataset %s, bank %s, checkpoint %s", data_equal ? "exact" : "MISMATCH",
                          bank_equal ? "exact" : "MISMATCH", ckpt_equal ? "exact" : "MISMATCH"));
  o.pass = weights_equal && data_equal && bank_equal && ckpt_equal;
  return o;
}

}  // namespace

int main() {
  const auto started = std::chrono::steady_clock::now();
  std::vector<Outcome> outcomes;
  auto report = [&](const Outcome& o) {
    std::printf("%s  C%zu %s\n", o.pass ? "PASS" : "FAIL", outcomes.size() + 1, o.title.c_str());
    for (const auto& d : o.details) std::printf("      %s\n", d.c_str());
    std::fflush(stdout);
    outcomes.push_back(o);
  };

  report(gradient_integrity());
  report(loss_identities());
  report(graph_conv_correctness());

  Workbench wb{generate_synthetic(SyntheticSpec::default_spec()), TextFeatureBank(1, 1, 1),
               &shipped_skeleton(SyntheticSpec::default_spec().skeleton), {}};
  {
    auto p = build_partition("four_part", *wb.graph);
    wb.bank = build_bank(wb.data.corpus, p, PromptType::SynonymPlusParts, HashedEmbedder(kTextDim));
  }
  using loss::ContrastVariant;

  // 4: baseline against GAP on the default spec.
  const auto c4_start = std::chrono::steady_clock::now();
  std::vector<Run> baseline, gap_kld;
  for (auto seed : kSeeds) baseline.push_back(run_training(wb, default_config(TrainMode::Baseline, ContrastVariant::KLD, seed)));
  for (auto seed : kSeeds) gap_kld.push_back(run_training(wb, default_config(TrainMode::Gap, ContrastVariant::KLD, seed)));
  const double c4_seconds = elapsed(c4_start);
  {
    std::vector<double> b, g;
    for (const auto& r : baseline) b.push_back(*r.report.final_test_acc);
    for (const auto& r : gap_kld) g.push_back(*r.report.final_test_acc);
    const double margin = mean(g) - mean(b);
    Outcome o{margin > 0.0 && c4_seconds < kImprovementBudgetSeconds, "GAP improves mean test top-1 over baseline", {}};
    o.details.push_back("baseline test: " + list(b) + fmt("  mean %.4f", mean(b)));
    o.details.push_back("gap      test: " + list(g) + fmt("  mean %.4f", mean(g)));
    o.details.push_back(fmt("margin %+.2f points (strictly positive required; soft target %.1f points %s)",
                            100.0 * margin, 100.0 * kGapSoftMargin, margin >= kGapSoftMargin ? "met" : "missed"));
    o.details.push_back(fmt("10 runs in %.1f s (< %.0f s)", c4_seconds, kImprovementBudgetSeconds));
    report(o);
  }

  // 5: every contrastive variant fits the training set.
  {
    Outcome o{true, "each loss variant reaches the train accuracy target", {}};
    std::map<std::string, std::vector<double>> accs;
    for (const auto& r : gap_kld) accs["kld"].push_back(r.report.final_train_acc);
    for (auto variant : {ContrastVariant::CL, ContrastVariant::JSD})
      for (auto seed : kSeeds)
        accs[std::string(loss::to_string(variant))].push_back(
            run_training(wb, default_config(TrainMode::Gap, variant, seed)).report.final_train_acc);
    for (const auto& [name, v] : accs) {
      const int hits = int(std::count_if(v.begin(), v.end(), [](double a) { return a >= kTrainAccTarget; }));
      o.pass = o.pass && hits >= kTrainAccSeedsNeeded;
      o.details.push_back(fmt("%-3s train acc: ", name.c_str()) + list(v) +
                          fmt("  (%d/5 >= %.2f, need %d)", hits, kTrainAccTarget, kTrainAccSeedsNeeded));
    }
    report(o);
  }

  // 6: four-stream ensemble against the best single stream.
  {
    const std::vector<std::string> names{"joint", "bone", "joint_motion", "bone_motion"};
    std::map<std::string, std::vector<double>> single;
    std::vector<double> fused;
    for (std::size_t s = 0; s < std::size(kSeeds); ++s) {
      std::vector<ScoreTable> tables{gap_kld[s].test_scores};
      for (std::size_t m = 1; m < names.size(); ++m)
        tables.push_back(
            run_training(wb, default_config(TrainMode::Gap, ContrastVariant::KLD, kSeeds[s]), names[m]).test_scores);
      for (std::size_t m = 0; m < names.size(); ++m) single[names[m]].push_back(top1_accuracy(tables[m]));
      fused.push_back(top1_accuracy(ensemble_fuse(tables)));
    }
    double best = 0.0;
    std::string best_name;
    Outcome o{false, "four-stream ensemble matches or beats the best single stream", {}};
    for (const auto& n : names) {
      o.details.push_back(fmt("%-12s test: ", n.c_str()) + list(single[n]) + fmt("  mean %.4f", mean(single[n])));
      if (mean(single[n]) > best) best = mean(single[n]), best_name = n;
    }
    o.details.push_back(fmt("%-12s test: ", "fused") + list(fused) + fmt("  mean %.4f", mean(fused)));
    o.pass = mean(fused) >= best;
    o.details.push_back(fmt("fused mean %.4f vs best single (%s) %.4f", mean(fused), best_name.c_str(), best));
    report(o);
  }

  // 7: determinism and serialization.
  report(determinism_and_serialization(wb));

  // 8: lambda = 0 reproduces the baseline run.
  {
    auto cfg = default_config(TrainMode::Gap, ContrastVariant::KLD, kSeeds[0]);
    cfg.lambda = 0.0;
    const auto zero = run_training(wb, cfg);
    const bool traj = same_trajectory(zero.report, baseline[0].report);
    const bool weights = same_bits(zero.weights, baseline[0].weights);
    Outcome o{traj, "zero lambda reproduces the baseline loss trajectory", {}};
    o.details.push_back(fmt("%zu epochs, loss trajectory %s, final weights %s", zero.report.epochs.size(),
                            traj ? "bit-identical" : "DIFFERS", weights ? "bit-identical" : "differ"));
    report(o);
  }

  const auto passed = std::count_if(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.pass; });
  std::printf("%zu/%zu criteria passed in %.1f s\n", static_cast<std::size_t>(passed), outcomes.size(),
              elapsed(started));
  return passed == static_cast<long>(outcomes.size()) ? 0 : 1;
}
