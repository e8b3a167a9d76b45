// SPDX-License-Identifier: Apache-2.0
#include "adimp/cli/rundir.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adimp/util/format.hpp"

namespace adimp::cli {

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d%02d%02dT%02d%02d%02d", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

RunDir make_run_dir(const std::string& root, const std::string& run_id) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::string stamp = utc_timestamp();
  std::string base = root + "/" + run_id + "_" + stamp;
  std::string path = base;
  for (int i = 1; fs::exists(path); ++i) path = base + "-" + std::to_string(i);
  fs::create_directory(path);
  return {path, run_id};
}

void write_metrics_csv(const std::string& path, const std::string& run_id, uint64_t seed,
                       const std::vector<train::MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);  // binary: no platform newline surprises
  if (!out) throw std::runtime_error("write_metrics_csv: cannot write " + path);
  out << "run_id,seed,epoch,split,metric,value\n";
  for (const auto& r : rows)
    out << run_id << ',' << seed << ',' << r.epoch << ',' << r.split << ',' << r.metric << ','
        << util::format_double(r.value) << '\n';
}

std::vector<train::MetricRow> read_metrics_csv(const std::string& path, std::string* run_id_out,
                                               uint64_t* seed_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "run_id,seed,epoch,split,metric,value")
    throw std::runtime_error("read_metrics_csv: unexpected header in " + path);
  std::vector<train::MetricRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string run_id, seed, epoch, split, metric, value;
    if (!std::getline(ss, run_id, ',') || !std::getline(ss, seed, ',') ||
        !std::getline(ss, epoch, ',') || !std::getline(ss, split, ',') ||
        !std::getline(ss, metric, ',') || !std::getline(ss, value))
      throw std::runtime_error("read_metrics_csv: malformed line " + std::to_string(lineno) +
                               " in " + path);
    train::MetricRow r;
    r.epoch = std::stoi(epoch);
    r.split = split;
    r.metric = metric;
    r.value = std::stod(value);
    rows.push_back(std::move(r));
    if (run_id_out) *run_id_out = run_id;
    if (seed_out) *seed_out = std::stoull(seed);
  }
  return rows;
}

}  // namespace adimp::cli
