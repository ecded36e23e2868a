#include "vtpt/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace vtpt {

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace

const char* MetricsRecord::csv_header() {
  return "run_id,phase,epoch,step,lr,loss_total,loss_center,loss_outer,acc_top1,wall_ms,seed";
}

std::string MetricsRecord::csv_row() const {
  std::string row;
  row.reserve(128);
  row += run_id;
  row += ',';
  row += phase;
  row += ',';
  row += std::to_string(epoch);
  row += ',';
  row += std::to_string(step);
  row += ',';
  row += fmt(lr);
  row += ',';
  row += fmt(loss_total);
  row += ',';
  row += fmt(loss_center);
  row += ',';
  row += fmt(loss_outer);
  row += ',';
  row += fmt(acc_top1);
  row += ',';
  row += fmt(wall_ms);
  row += ',';
  row += std::to_string(seed);
  return row;
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("metrics: cannot open " + path);
  if (fresh) out_ << MetricsRecord::csv_header() << "\n" << std::flush;
}

void MetricsWriter::append(const MetricsRecord& r) {
  out_ << r.csv_row() << "\n" << std::flush;
  if (!out_) throw std::runtime_error("metrics: write failed for " + path_);
}

}  // namespace vtpt
