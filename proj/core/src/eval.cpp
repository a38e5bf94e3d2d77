// SPDX-License-Identifier: Apache-2.0
#include "gap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gap/errors.hpp"
#include "gap/io.hpp"

namespace gap {

void ScoreTable::validate() const {
  if (scores.rank() != 2) throw ConfigError("score table: scores must be [S, C], got " + shape_to_string(scores.shape()));
  if (scores.dim(0) != labels.size()) {
    throw ConfigError("score table: " + std::to_string(scores.dim(0)) + " score rows but " +
                      std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ConfigError("score table is empty");
  if (!scores.all_finite()) throw ConfigError("score table: non-finite score");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= scores.dim(1)) {
      throw ConfigError("score table: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                        " out of range");
    }
  }
}

Tensor<float> predict_logits(EncoderModel<float>& model, const SkeletonBatch& batch, std::size_t chunk) {
  const std::size_t s = batch.size();
  const std::size_t c = model.config().num_classes;
  Tensor<float> out({s, c});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < s; start += chunk) {
    const std::size_t stop = std::min(s, start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto res = model.forward(batch.gather<float>(idx), false);
    std::copy_n(res.logits.data(), res.logits.size(), out.data() + start * c);
  }
  return out;
}

ScoreTable score_batch(EncoderModel<float>& model, const SkeletonBatch& batch) {
  ScoreTable table;
  table.scores = predict_logits(model, batch).cast<double>();
  table.labels = batch.labels;
  table.modality = batch.modality;
  return table;
}

std::size_t argmax_row(const double* row, std::size_t cols) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

double top1_accuracy(const ScoreTable& table) {
  table.validate();
  const std::size_t c = table.num_classes();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (argmax_row(table.scores.data() + i * c, c) == table.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(table.size());
}

ScoreTable ensemble_fuse(const std::vector<ScoreTable>& tables, std::vector<double> weights, bool softmax) {
  if (tables.empty()) throw ConfigError("ensemble: no score tables");
  if (weights.empty()) weights.assign(tables.size(), 1.0);
  if (weights.size() != tables.size()) {
    throw ConfigError("ensemble: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(tables.size()) + " tables");
  }
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("ensemble: weights must be finite and non-negative");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("ensemble: weights are all zero");

  const ScoreTable& first = tables.front();
  first.validate();
  ScoreTable fused;
  fused.labels = first.labels;
  fused.scores = Tensor<double>(first.scores.shape());
  fused.modality = "ensemble";
  const std::size_t c = first.num_classes();
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const ScoreTable& table = tables[t];
    table.validate();
    if (table.scores.shape() != first.scores.shape()) {
      throw ConfigError("ensemble: table " + std::to_string(t) + " has shape " + shape_to_string(table.scores.shape()) +
                        ", expected " + shape_to_string(first.scores.shape()));
    }
    if (table.labels != first.labels) throw ConfigError("ensemble: labels of table " + std::to_string(t) + " differ");
    for (std::size_t i = 0; i < table.size(); ++i) {
      const double* row = table.scores.data() + i * c;
      double* dst = fused.scores.data() + i * c;
      if (softmax) {
        const double m = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
        for (std::size_t j = 0; j < c; ++j) dst[j] += weights[t] * std::exp(row[j] - m) / z;
      } else {
        for (std::size_t j = 0; j < c; ++j) dst[j] += weights[t] * row[j];
      }
    }
  }
  return fused;
}

std::vector<double> per_class_accuracy(const ScoreTable& table) {
  table.validate();
  const std::size_t c = table.num_classes();
  std::vector<double> hit(c, 0.0), count(c, 0.0);
  for (std::size_t i = 0; i < table.size(); ++i) {
    count[table.labels[i]] += 1.0;
    if (argmax_row(table.scores.data() + i * c, c) == table.labels[i]) hit[table.labels[i]] += 1.0;
  }
  std::vector<double> acc(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) acc[j] = count[j] > 0.0 ? hit[j] / count[j] : 0.0;
  return acc;
}

std::vector<ClassDiff> per_class_diff(const ScoreTable& a, const ScoreTable& b, double threshold) {
  if (a.labels != b.labels) throw ConfigError("per-class diff: label vectors differ");
  if (a.num_classes() != b.num_classes()) throw ConfigError("per-class diff: class counts differ");
  const auto acc_a = per_class_accuracy(a);
  const auto acc_b = per_class_accuracy(b);
  std::vector<ClassDiff> out;
  for (std::size_t j = 0; j < acc_a.size(); ++j) {
    if (std::abs(acc_b[j] - acc_a[j]) > threshold) out.push_back({j, acc_a[j], acc_b[j]});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ClassDiff& x, const ClassDiff& y) { return x.acc_b - x.acc_a < y.acc_b - y.acc_a; });
  return out;
}

void save_scores_csv(const ScoreTable& table, const std::filesystem::path& path) {
  table.validate();
  const std::size_t c = table.num_classes();
  std::string text;
  char buf[40];
  for (std::size_t j = 0; j < c; ++j) text += "s" + std::to_string(j) + ",";
  text += "label,modality\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,", table.scores.data()[i * c + j]);
      text += buf;
    }
    text += std::to_string(table.labels[i]) + "," + table.modality + "\n";
  }
  io::write_text(path, text);
}

ScoreTable load_scores_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty score file");
  std::size_t c = 0;
  {
    std::istringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) {
      if (!cell.empty() && cell[0] == 's' && cell != "s") ++c;
    }
  }
  if (c == 0) throw FormatError(path.string() + ": header has no score columns");
  std::vector<double> values;
  ScoreTable table;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::vector<std::string> cells;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != c + 2) {
      throw FormatError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(c + 2));
    }
    try {
      for (std::size_t j = 0; j < c; ++j) values.push_back(std::stod(cells[j]));
      table.labels.push_back(static_cast<std::uint32_t>(std::stoul(cells[c])));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": row " + std::to_string(row) + " is not numeric");
    }
    if (row == 1) table.modality = cells[c + 1];
  }
  table.scores = Tensor<double>({table.labels.size(), c}, std::move(values));
  try {
    table.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return table;
}

std::vector<std::vector<double>> text_similarity_matrix(const TextFeatureBank& bank, std::size_t slot) {
  if (slot >= bank.num_slots()) {
    throw LookupError("slot " + std::to_string(slot) + " not in bank with " + std::to_string(bank.num_slots()) +
                      " slots");
  }
  const std::size_t c = bank.num_classes(), d = bank.dim();
  std::vector<std::vector<double>> mean(c, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t nv = bank.num_variants(i, slot);
    if (nv == 0) throw LookupError("class " + std::to_string(i) + " has no embedding in slot " + std::to_string(slot));
    for (std::size_t v = 0; v < nv; ++v) {
      const auto row = bank.get(i, slot, v);
      for (std::size_t k = 0; k < d; ++k) mean[i][k] += row[k];
    }
    double norm = 0.0;
    for (double x : mean[i]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& x : mean[i]) x /= norm;
  }
  std::vector<std::vector<double>> out(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i; j < c; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += mean[i][k] * mean[j][k];
      dot = std::clamp(dot, -1.0, 1.0);
      out[i][j] = out[j][i] = dot;
    }
  }
  return out;
}

void save_similarity_csv(const std::vector<std::vector<double>>& matrix, const std::vector<std::string>& class_names,
                         const std::filesystem::path& path) {
  if (class_names.size() != matrix.size()) {
    throw ConfigError("similarity matrix has " + std::to_string(matrix.size()) + " rows but " +
                      std::to_string(class_names.size()) + " class names");
  }
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  std::string text = "class";
  for (const auto& n : class_names) text += "," + quote(n);
  text += "\n";
  char buf[40];
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    text += quote(class_names[i]);
    for (double v : matrix[i]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      text += buf;
    }
    text += "\n";
  }
  io::write_text(path, text);
}

}  // namespace gap
