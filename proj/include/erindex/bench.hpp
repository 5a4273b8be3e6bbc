#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "erindex/erindex.hpp"

namespace erindex {

struct BenchOptions {
    std::vector<uint32_t> pattern_lengths{20, 50, 100, 200, 500};
    uint32_t patterns_per_length = 500;
    uint64_t seed = 0;
    uint32_t repeats = 3;
    bool concurrent = false;  // timings reported separately; results must match
    unsigned concurrency = 4;
};

struct BenchSample {
    uint32_t repeat = 0;
    uint32_t pattern_length = 0;
    uint32_t pattern_index = 0;
    std::string individual;   // the sequence the pattern was sampled from
    uint64_t position = 0;    // sampling position
    double time_ms = 0.0;
    uint64_t occurrences = 0;
};

struct BenchAggregate {
    uint32_t repeat = 0;
    uint32_t pattern_length = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double mean_per_occ_ms = 0.0;
    double median_per_occ_ms = 0.0;
    uint64_t total_occurrences = 0;
};

struct BenchReport {
    std::string collection_id;
    std::string rng_description;
    double build_time_s = 0.0;  // 0 when benching a prebuilt index
    uint64_t input_bytes = 0;
    uint64_t index_bytes = 0;
    double compression_ratio = 0.0;
    IndexSectionSizes sections;
    std::vector<BenchSample> samples;
    std::vector<BenchAggregate> aggregates;
};

/// Per-(repeat, length) mean/median of times and per-occurrence times,
/// derived purely from the samples (the CSV rows reproduce them).
std::vector<BenchAggregate> aggregate_samples(const std::vector<BenchSample>& samples);

/// Runs the locate benchmark: patterns are sampled uniformly from the
/// indexed (authorized) sequences, so every search returns at least one
/// occurrence. The index is reopened header-only for each repeat; timings
/// exclude the open but include lazy decryption triggered by queries.
BenchReport run_bench(const std::filesystem::path& index_path, const KeyPortfolio& portfolio,
                      std::shared_ptr<const ReferencePack> ref, const BenchOptions& options);

/// Raw samples plus aggregate rows, one CSV. Schema documented in the README.
void write_bench_csv(const std::filesystem::path& path, const BenchReport& report);

/// Human-readable summary table.
std::string format_bench_table(const BenchReport& report);

}  // namespace erindex
