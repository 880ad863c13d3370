#include "attnmemcap/io.hpp"

#include "attnmemcap/bounds.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace attnmemcap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json(const fs::path& path) { return json::parse(slurp(path)); }

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("ragged CSV in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void save_dataset(const fs::path& dir, const Dataset& data) {
  data.validate();
  const DatasetDims dm = data.dims();
  fs::create_directories(dir);

  json manifest;
  manifest["T"] = dm.T;
  manifest["n"] = dm.n;
  manifest["d"] = dm.d;
  manifest["d_out"] = dm.d_out;
  manifest["task"] = data.task.str();
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  Matrix queries(dm.T, dm.d);
  Matrix labels(dm.T, dm.d_out);
  for (int t = 0; t < dm.T; ++t) {
    queries.row(t) = data.examples[t].query.transpose();
    labels.row(t) = data.examples[t].label.transpose();
    write_matrix_csv(dir / ("context_" + std::to_string(t + 1) + ".csv"),
                     data.examples[t].context);
  }
  write_matrix_csv(dir / "queries.csv", queries);
  write_matrix_csv(dir / "labels.csv", labels);
}

Dataset load_dataset(const fs::path& dir) {
  const json manifest = load_json(dir / "manifest.json");
  const int T = manifest.at("T").get<int>();
  Dataset data;
  data.task = Task::parse(manifest.at("task").get<std::string>());
  const Matrix queries = read_matrix_csv(dir / "queries.csv");
  const Matrix labels = read_matrix_csv(dir / "labels.csv");
  if (queries.rows() != T || labels.rows() != T) {
    throw std::runtime_error("dataset " + dir.string() + ": row counts disagree with manifest");
  }
  data.examples.resize(T);
  for (int t = 0; t < T; ++t) {
    data.examples[t].context = read_matrix_csv(dir / ("context_" + std::to_string(t + 1) + ".csv"));
    data.examples[t].query = queries.row(t).transpose();
    data.examples[t].label = labels.row(t).transpose();
  }
  data.validate();
  return data;
}

void save_weights(const fs::path& dir, const AttentionWeights& w, const AttentionConfig& cfg,
                  std::uint64_t seed) {
  if (!w.matches(cfg)) throw DimensionError("save_weights: weights do not match config");
  fs::create_directories(dir);
  json manifest;
  manifest["heads"] = cfg.heads;
  manifest["d"] = cfg.d;
  manifest["d_h"] = cfg.d_h;
  manifest["d_v"] = cfg.d_v;
  manifest["d_out"] = cfg.d_out;
  manifest["skip_connection"] = cfg.skip_connection;
  manifest["seed"] = seed;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  for (int h = 0; h < cfg.heads; ++h) {
    const std::string tag = std::to_string(h + 1);
    write_matrix_csv(dir / ("wk_" + tag + ".csv"), w.key[h]);
    write_matrix_csv(dir / ("wq_" + tag + ".csv"), w.query[h]);
    write_matrix_csv(dir / ("wv_" + tag + ".csv"), w.value[h]);
  }
  write_matrix_csv(dir / "wo.csv", w.output);
  write_matrix_csv(dir / "wd.csv", w.readout);
}

StoredWeights load_weights(const fs::path& dir) {
  const json manifest = load_json(dir / "manifest.json");
  StoredWeights stored;
  stored.config.heads = manifest.at("heads").get<int>();
  stored.config.d = manifest.at("d").get<int>();
  stored.config.d_h = manifest.at("d_h").get<int>();
  stored.config.d_v = manifest.at("d_v").get<int>();
  stored.config.d_out = manifest.at("d_out").get<int>();
  stored.config.skip_connection = manifest.value("skip_connection", false);
  stored.seed = manifest.value("seed", 0ULL);
  stored.config.validate();

  stored.weights = AttentionWeights::zeros(stored.config);
  for (int h = 0; h < stored.config.heads; ++h) {
    const std::string tag = std::to_string(h + 1);
    stored.weights.key[h] = read_matrix_csv(dir / ("wk_" + tag + ".csv"));
    stored.weights.query[h] = read_matrix_csv(dir / ("wq_" + tag + ".csv"));
    stored.weights.value[h] = read_matrix_csv(dir / ("wv_" + tag + ".csv"));
  }
  stored.weights.output = read_matrix_csv(dir / "wo.csv");
  stored.weights.readout = read_matrix_csv(dir / "wd.csv");
  if (!stored.weights.matches(stored.config)) {
    throw DimensionError("weights in " + dir.string() + " do not match their manifest");
  }
  return stored;
}

std::string to_json(const AssumptionReport& report) {
  json j;
  j["assumption1"] = {{"passed", report.assumption1.passed},
                      {"pass_rate", report.assumption1.pass_rate},
                      {"trials", report.assumption1.trials}};
  j["assumption2"] = {{"passed", report.assumption2.passed}};
  if (report.assumption2.first_failing_example) {
    j["assumption2"]["first_failing_example"] = *report.assumption2.first_failing_example;
  }
  j["assumption3"] = {{"passed", report.assumption3.passed},
                      {"pass_rate", report.assumption3.pass_rate}};
  j["general_position"] = {{"passed", report.general_position.passed},
                           {"pass_rate", report.general_position.pass_rate}};
  j["measured_kruskal_lower_bound"] = report.measured_kruskal_lower_bound;
  return j.dump(2) + "\n";
}

std::string to_json(const SynthesisReport& report) {
  json heads = json::array();
  for (const HeadReport& hr : report.heads) {
    json h;
    h["assigned"] = hr.assigned;
    h["saturating"] = hr.saturating;
    h["scale_c"] = hr.scale_c;
    h["achieved_rank"] = hr.achieved_rank;
    h["rank_after"] = hr.rank_after;
    h["max_l1_to_limit"] = hr.max_l1_to_limit;
    h["min_logit_margin"] = hr.min_logit_margin;
    if (std::isfinite(hr.delta_closed_form)) {
      h["delta_closed_form"] = hr.delta_closed_form;
    } else {
      h["delta_closed_form"] = nullptr;
    }
    h["protected_logits_exact"] = hr.protected_logits_exact;
    heads.push_back(std::move(h));
  }
  json j;
  j["heads"] = std::move(heads);
  j["rank_Z"] = report.rank_Z;
  j["capacity"] = report.capacity;
  j["per_head_budget"] = report.per_head_budget;
  j["max_abs_error"] = report.max_abs_error;
  j["max_rel_error"] = report.max_rel_error;
  return j.dump(2) + "\n";
}

std::string to_json(const VerifyResult& result) {
  json j;
  j["max_abs_error"] = result.max_abs_error;
  j["max_rel_error"] = result.max_rel_error;
  j["passed"] = result.passed;
  return j.dump(2) + "\n";
}

std::string to_json(const SaturationReport& report) {
  json j;
  j["threshold"] = report.threshold;
  json flags = json::array();
  for (const auto& row : report.saturated) {
    json r = json::array();
    for (bool b : row) r.push_back(b);
    flags.push_back(std::move(r));
  }
  j["saturated"] = std::move(flags);
  j["heads_per_example_hist"] = report.heads_per_example_hist;
  j["max_coeff_hist"] = report.max_coeff_hist;
  return j.dump(2) + "\n";
}

std::string bounds_json(int heads, int n, int d, int d_h, int m, int d_out, int kruskal_q) {
  json j;
  j["theorem1_lower_bound"] = theorem1_lower_bound(heads, n, d_h);
  j["prop2_upper_bound"] = prop2_upper_bound(heads, n);
  j["prop5_upper_bound"] = prop5_upper_bound(heads, d);
  if (m > 0) j["relu_upper_bound"] = relu_upper_bound(n, m, d_out > 0 ? d_out : 1);
  if (kruskal_q > 0) j["remark1_lower_bound"] = remark1_lower_bound(heads, kruskal_q, d_h);
  return j.dump(2) + "\n";
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "H,n,dh,T,seed,metric,value\n";
  for (const SweepRow& row : rows) {
    out << row.cell.heads << ',' << row.cell.n << ',' << row.cell.d_h << ',' << row.cell.T
        << ',' << row.seed << ',' << row.metric << ',' << format_double(row.value) << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SweepRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> parts;
    while (std::getline(ss, cell, ',')) parts.push_back(cell);
    if (parts.size() != 7) throw std::runtime_error("bad sweep row: " + line);
    SweepRow row;
    row.cell.heads = std::stoi(parts[0]);
    row.cell.n = std::stoi(parts[1]);
    row.cell.d_h = std::stoi(parts[2]);
    row.cell.T = std::stoi(parts[3]);
    row.seed = std::stoull(parts[4]);
    row.metric = parts[5];
    row.value = std::stod(parts[6]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void write_run_manifest(const fs::path& dir, const std::string& command,
                        const std::string& config_json, std::uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
  fs::create_directories(dir);
  json j;
  j["command"] = command;
  j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
  j["seed"] = seed;
  j["version"] = "0.1.0";
  j["timestamp"] = timestamp_utc();
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  write_text_file(dir / "run_manifest.json", j.dump(2) + "\n");
}

}  // namespace attnmemcap
