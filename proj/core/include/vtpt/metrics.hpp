#pragma once

#include <cstdint>
#include <fstream>
#include <string>

namespace vtpt {

/// One row of run telemetry. acc_top1 is -1 when the phase computed none.
struct MetricsRecord {
  std::string run_id;
  std::string phase;
  int64_t epoch = 0;
  int64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_center = 0.0;
  double loss_outer = 0.0;
  double acc_top1 = -1.0;
  double wall_ms = 0.0;
  uint64_t seed = 0;

  std::string csv_row() const;
  static const char* csv_header();
};

/// Append-only CSV sink with a fixed column set. A fresh file gets the header
/// row; every append is flushed.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void append(const MetricsRecord& r);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

}  // namespace vtpt
