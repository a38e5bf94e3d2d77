// SPDX-License-Identifier: Apache-2.0
// gap: command line front end for data generation, training and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gap/checkpoint.hpp"
#include "gap/dataset.hpp"
#include "gap/errors.hpp"
#include "gap/eval.hpp"
#include "gap/gradcheck.hpp"
#include "gap/io.hpp"
#include "gap/synthetic.hpp"
#include "gap/textbank.hpp"
#include "gap/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;

struct GenDataArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string bank;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string modality = "joint";
  std::string out;
};

struct EnsembleArgs {
  std::vector<std::string> csvs;
  std::vector<double> weights;
  bool softmax = false;
};

struct GradcheckArgs {
  std::size_t seeds = 20;
  std::string json_out;
  bool corrupt = false;
  std::optional<std::uint64_t> seed;
};

struct TextSimArgs {
  std::string bank;
  std::size_t slot = 0;
  std::string corpus;
  std::string out;
};

struct EmbedArgs {
  std::string corpus;
  std::string prompt_type = "synonym_plus_parts";
  std::string partition = "four_part";
  std::string skeleton = "toy10";
  std::size_t dim = 64;
  bool no_global = false;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct KnnArgs {
  std::string query;
  std::string candidates;
  std::size_t k = 5;
  std::size_t dim = 64;
};

int cmd_gen_data(const GenDataArgs& a) {
  gap::SyntheticSpec spec = a.spec.empty() ? gap::SyntheticSpec::default_spec()
                                           : gap::SyntheticSpec::from_json(gap::io::read_text(a.spec));
  if (a.seed) spec.seed = *a.seed;
  const auto ds = gap::generate_synthetic(spec);
  const fs::path out(a.out);
  gap::save_dataset(ds.train, out / "train");
  gap::save_dataset(ds.test, out / "test");
  gap::save_corpus(ds.corpus, out / "corpus.json");
  gap::io::write_text(out / "spec.json", json::parse(spec.to_json()).dump(2) + "\n");
  std::printf("wrote %zu train / %zu test samples, %zu classes, T=%zu, skeleton %s to %s\n", ds.train.size(),
              ds.test.size(), spec.num_classes(), spec.frames, spec.skeleton.c_str(), a.out.c_str());
  return kExitOk;
}

// Experiment config: training fields plus optional data_dir, bank and
// output_dir paths. Command-line flags win over the file.
int cmd_train(TrainArgs a) {
  const std::string text = gap::io::read_text(a.config);
  gap::TrainConfig config = gap::TrainConfig::from_json(text);
  const json j = json::parse(text);
  if (a.data.empty()) a.data = j.value("data_dir", std::string());
  if (a.bank.empty()) a.bank = j.value("bank", std::string());
  if (a.out.empty()) a.out = j.value("output_dir", std::string());
  if (a.seed) config.seed = *a.seed;
  if (a.data.empty()) throw gap::ConfigError("data_dir: no dataset directory given");
  if (a.out.empty()) throw gap::ConfigError("output_dir: no output directory given");

  const fs::path data(a.data);
  const auto modality = gap::parse_modality(config.modality);
  auto train_set = gap::load_dataset(data / "train");
  std::optional<gap::SkeletonBatch> test_set;
  if (fs::exists(data / "test" / "meta.json")) test_set = gap::load_dataset(data / "test");
  const auto& graph = gap::shipped_skeleton(train_set.skeleton);
  train_set = gap::derive_modality(train_set, graph, modality);
  if (test_set) test_set = gap::derive_modality(*test_set, graph, modality);

  std::optional<gap::TextFeatureBank> bank;
  if (config.mode == gap::TrainMode::Gap) {
    if (a.bank.empty()) throw gap::ConfigError("bank: gap mode needs a text feature bank (--bank)");
    if (!fs::exists(a.bank)) throw gap::ConfigError("bank: file '" + a.bank + "' does not exist");
    bank = gap::load_bank(a.bank);
  }

  gap::TrainReport report;
  auto model = gap::train(train_set, test_set ? &*test_set : nullptr, bank ? &*bank : nullptr, config, &report);
  const fs::path out(a.out);
  gap::save_checkpoint(model, out / "checkpoint");
  gap::write_report(report, out);
  gap::io::write_text(out / "config.json", config.to_json() + "\n");
  const auto& last = report.epochs.back();
  std::printf("mode=%s epochs=%zu loss=%.6f train_acc=%.4f", report.mode.c_str(), report.epochs.size(), last.loss,
              report.final_train_acc);
  if (report.final_test_acc) std::printf(" test_acc=%.4f", *report.final_test_acc);
  std::printf(" (%.1f s)\n", report.wall_seconds);
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  auto model = gap::load_checkpoint(a.checkpoint);
  auto batch = gap::load_dataset(a.data);
  batch = gap::derive_modality(batch, model.graph(), gap::parse_modality(a.modality));
  const auto table = gap::score_batch(model, batch);
  if (!a.out.empty()) gap::save_scores_csv(table, a.out);
  std::printf("modality=%s samples=%zu top1=%.6f\n", table.modality.c_str(), table.size(), gap::top1_accuracy(table));
  return kExitOk;
}

int cmd_ensemble(const EnsembleArgs& a) {
  std::vector<gap::ScoreTable> tables;
  for (const auto& p : a.csvs) tables.push_back(gap::load_scores_csv(p));
  for (std::size_t i = 0; i < tables.size(); ++i) {
    std::printf("%-14s %s top1=%.6f\n", tables[i].modality.c_str(), a.csvs[i].c_str(), gap::top1_accuracy(tables[i]));
  }
  const auto fused = gap::ensemble_fuse(tables, a.weights, a.softmax);
  std::printf("fused top1=%.6f\n", gap::top1_accuracy(fused));
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  gap::GradcheckOptions opt;
  opt.seeds = a.seeds;
  opt.corrupt = a.corrupt;
  if (a.seed) opt.seed = *a.seed;
  const auto report = gap::gradcheck_suite(opt);
  std::fputs(report.to_text().c_str(), stdout);
  if (!a.json_out.empty()) gap::io::write_text(a.json_out, report.to_json() + "\n");
  return report.passed() ? kExitOk : kExitFailure;
}

int cmd_text_sim(const TextSimArgs& a) {
  const auto bank = gap::load_bank(a.bank);
  const auto matrix = gap::text_similarity_matrix(bank, a.slot);
  std::vector<std::string> names;
  if (!a.corpus.empty()) {
    for (const auto& c : gap::load_corpus(a.corpus).classes) names.push_back(c.label_name);
  } else {
    for (std::size_t i = 0; i < bank.num_classes(); ++i) names.push_back("class" + std::to_string(i));
  }
  if (!a.out.empty()) gap::save_similarity_csv(matrix, names, a.out);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    for (double v : matrix[i]) std::printf(" %6.3f", v);
    std::printf("  %s\n", names[i].c_str());
  }
  return kExitOk;
}

int cmd_embed(const EmbedArgs& a) {
  const auto corpus = gap::load_corpus(a.corpus);
  const auto& graph = gap::shipped_skeleton(a.skeleton);
  auto partition = gap::build_partition(a.partition, graph);
  if (a.no_global && a.partition != "global") partition.include_global = false;
  const gap::HashedEmbedder embedder(a.dim, a.seed.value_or(0));
  const auto bank = gap::build_bank(corpus, partition, gap::parse_prompt_type(a.prompt_type), embedder);
  gap::save_bank(bank, a.out);
  std::printf("bank: %zu classes x %zu slots, %zu embeddings of dim %zu -> %s\n", bank.num_classes(), bank.num_slots(),
              bank.size(), bank.dim(), a.out.c_str());
  return kExitOk;
}

int cmd_knn(const KnnArgs& a) {
  std::vector<std::string> candidates;
  std::istringstream in(gap::io::read_text(a.candidates));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) candidates.push_back(line);
  const gap::HashedEmbedder embedder(a.dim);
  for (std::size_t i : gap::knn_select(a.query, candidates, a.k, embedder)) {
    std::printf("%zu\t%s\n", i, candidates[i].c_str());
  }
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const gap::IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const gap::DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const gap::Error*>(&e)) return kExitConfig;
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-aware language-supervised skeleton action recognition toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic part-motion dataset and its corpus");
  gen_cmd->add_option("--spec", gen.spec, "Generator spec JSON (default spec when omitted)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train an encoder (baseline, gap or part_cls mode)");
  train_cmd->add_option("--config", tr.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset directory holding train/ and test/");
  train_cmd->add_option("--bank", tr.bank, "Text feature bank JSON (gap mode)");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_option("--seed", tr.seed, "Override the config seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a dataset split with a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset split directory")->required();
  eval_cmd->add_option("--modality", ev.modality, "joint, bone, joint_motion or bone_motion");
  eval_cmd->add_option("--out", ev.out, "Score CSV to write");

  EnsembleArgs en;
  auto* ens_cmd = app.add_subcommand("ensemble", "Fuse score CSVs of several modalities");
  ens_cmd->add_option("csvs", en.csvs, "Score CSV files")->required()->check(CLI::ExistingFile);
  ens_cmd->add_option("--weights", en.weights, "One weight per CSV (default all 1)");
  ens_cmd->add_flag("--softmax", en.softmax, "Fuse softmax probabilities instead of logits");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare every backward pass with finite differences");
  gc_cmd->add_option("--seeds", gc.seeds, "Random instances per case")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--json", gc.json_out, "Write the report as JSON");
  gc_cmd->add_option("--seed", gc.seed, "Master seed for the random instances");
  gc_cmd->add_flag("--corrupt", gc.corrupt, "Negate analytic gradients (self-test, must fail)");

  TextSimArgs ts;
  auto* ts_cmd = app.add_subcommand("text-sim", "Export the class similarity matrix of one bank slot");
  ts_cmd->add_option("--bank", ts.bank, "Text feature bank JSON")->required();
  ts_cmd->add_option("--slot", ts.slot, "Slot index");
  ts_cmd->add_option("--corpus", ts.corpus, "Corpus for class names");
  ts_cmd->add_option("--out", ts.out, "CSV to write");

  EmbedArgs em;
  auto* em_cmd = app.add_subcommand("embed", "Build a text feature bank from a description corpus");
  em_cmd->add_option("--corpus", em.corpus, "Description corpus JSON")->required();
  em_cmd->add_option("--prompt-type", em.prompt_type,
                     "label_name, synonym, paragraph, body_parts or synonym_plus_parts");
  em_cmd->add_option("--partition", em.partition, "global, two_part, four_part or six_part");
  em_cmd->add_option("--skeleton", em.skeleton, "Shipped skeleton name");
  em_cmd->add_option("--dim", em.dim, "Embedding dimension");
  em_cmd->add_flag("--no-global", em.no_global, "Omit the global contrast slot");
  em_cmd->add_option("--seed", em.seed, "Hash seed of the embedder");
  em_cmd->add_option("--out", em.out, "Bank JSON to write")->required();

  KnnArgs kn;
  auto* knn_cmd = app.add_subcommand("knn", "Select the candidate texts nearest to a query");
  knn_cmd->add_option("--query", kn.query, "Query text")->required();
  knn_cmd->add_option("--candidates", kn.candidates, "File with one candidate per line")->required();
  knn_cmd->add_option("-k", kn.k, "Number of neighbours");
  knn_cmd->add_option("--dim", kn.dim, "Embedding dimension");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*ens_cmd) return cmd_ensemble(en);
    if (*gc_cmd) return cmd_gradcheck(gc);
    if (*ts_cmd) return cmd_text_sim(ts);
    if (*em_cmd) return cmd_embed(em);
    if (*knn_cmd) return cmd_knn(kn);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitFailure;
}
