#pragma once

#include "attnmemcap/assumptions.hpp"
#include "attnmemcap/attention.hpp"
#include "attnmemcap/experiments.hpp"
#include "attnmemcap/synthesis.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace attnmemcap {

/// Plain decimal text, comma separated, one matrix row per line, no header.
/// Written with enough digits to round-trip doubles exactly.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Dataset directory: manifest.json {T,n,d,d_out,task}, context_<t>.csv
/// (t = 1..T), queries.csv (T x d), labels.csv (T x d_out).
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

/// Weights directory: manifest.json (dims, heads, skip flag, seed) plus
/// wk_<h>.csv / wq_<h>.csv / wv_<h>.csv (h = 1..H), wo.csv, wd.csv.
struct StoredWeights {
  AttentionWeights weights;
  AttentionConfig config;
  std::uint64_t seed = 0;
};
void save_weights(const std::filesystem::path& dir, const AttentionWeights& w,
                  const AttentionConfig& cfg, std::uint64_t seed);
StoredWeights load_weights(const std::filesystem::path& dir);

std::string to_json(const AssumptionReport& report);
std::string to_json(const SynthesisReport& report);
std::string to_json(const VerifyResult& result);
std::string to_json(const SaturationReport& report);
std::string bounds_json(int heads, int n, int d, int d_h, int m, int d_out, int kruskal_q);

/// CSV with header H,n,dh,T,seed,metric,value.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Every output directory gets one of these: enough to re-run the command.
void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        const std::string& config_json, std::uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs);

}  // namespace attnmemcap
