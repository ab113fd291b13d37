#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "arcs/simulate.hpp"
#include "arcs/tokenizer.hpp"
#include "arcs/topology.hpp"

namespace arcs {

constexpr int kDatasetSchemaVersion = 1;

struct DatasetRecord {
  int schema_version = kDatasetSchemaVersion;
  std::string topology;
  std::map<std::string, double> spec;
  std::vector<std::pair<std::string, double>> components;
  SimMetrics metrics;
  RewardBreakdown reward;
  bool valid = false;  // simulation validity

  CircuitDesign design() const {
    return CircuitDesign{topology, spec, components};
  }
};

struct DatasetSummary {
  // topology -> (valid count, total count)
  std::map<std::string, std::pair<long, long>> per_topology;
  long total = 0;
  long valid = 0;
};

// sample -> simulate -> label, `count` records per template. Backend
// failures become valid=false records rather than errors.
std::vector<DatasetRecord> generate_dataset(
    const std::vector<std::string>& templates, int count_per_template,
    SimBackend backend, uint64_t seed, const SpiceConfig& spice = {});

DatasetSummary summarize_dataset(const std::vector<DatasetRecord>& records);

// Line-delimited JSON records.
void write_dataset(const std::string& path,
                   const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(const std::string& path);

std::string record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const std::string& line);

// Each record expands into `factor` token sequences via component-order
// shuffling.
std::vector<TokenSequence> augment_dataset(
    const std::vector<DatasetRecord>& records, int factor, uint64_t seed);

}  // namespace arcs
