#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "erindex/bench.hpp"
#include "oracles.hpp"

using namespace erindex;
namespace fs = std::filesystem;

namespace {

struct BenchFixture {
    fs::path index_path;
    KeyPortfolio portfolio;
    std::shared_ptr<const ReferencePack> pack;

    BenchFixture() {
        std::mt19937_64 rng(60);
        auto reference = oracle::random_dna(rng, 8000);
        pack = std::make_shared<ReferencePack>(ReferencePack::build(reference, 16));
        portfolio.user_id = "bench";
        portfolio.system_key = generate_key();
        std::vector<Sequence> collection;
        std::map<std::string, SymmetricKey> keys;
        Sequence ref_seq{"ref", "chr", reference};
        for (unsigned i = 0; i < 3; ++i) {
            std::string id = "ind" + std::to_string(i);
            collection.push_back(
                mutate_reference(ref_seq, MutationProfile{0.01, 0.002, 0.002, 600u + i}, id));
            auto k = generate_key();
            keys[id] = k;
            portfolio.individual_keys[id] = k;
        }
        auto idx = ErIndex::build(collection, pack, "chr", keys, 64, 2);
        index_path = fs::temp_directory_path() / "bench_fixture.eri";
        idx.save(index_path, portfolio);
    }
};

std::vector<std::vector<std::string>> parse_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(12);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("bench runs, samples occur, aggregates recompute from raw rows") {
    BenchFixture fx;
    BenchOptions opts;
    opts.pattern_lengths = {8, 16, 32};
    opts.patterns_per_length = 20;
    opts.seed = 7;
    opts.repeats = 2;
    auto report = run_bench(fx.index_path, fx.portfolio, fx.pack, opts);

    CHECK(report.samples.size() == 3 * 20 * 2);
    for (const auto& s : report.samples) CHECK(s.occurrences >= 1);  // sampled from the data
    CHECK(report.compression_ratio > 0);
    CHECK(report.sections.sections_total() == report.sections.file);

    // aggregates derive exactly from the samples
    auto recomputed = aggregate_samples(report.samples);
    REQUIRE(recomputed.size() == report.aggregates.size());
    for (size_t i = 0; i < recomputed.size(); ++i) {
        CHECK(recomputed[i].mean_ms == doctest::Approx(report.aggregates[i].mean_ms).epsilon(1e-12));
        CHECK(recomputed[i].median_per_occ_ms ==
              doctest::Approx(report.aggregates[i].median_per_occ_ms).epsilon(1e-12));
    }

    SUBCASE("CSV is well-formed and aggregate rows recompute within 1e-9") {
        auto csv_path = fs::temp_directory_path() / "bench_test.csv";
        write_bench_csv(csv_path, report);
        auto rows = parse_csv(csv_path);
        REQUIRE(rows.size() == 1 + report.samples.size() + report.aggregates.size());
        CHECK(rows[0][0] == "type");

        std::vector<BenchSample> parsed;
        std::map<std::pair<uint32_t, uint32_t>, BenchAggregate> parsed_aggs;
        for (size_t i = 1; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (r[0] == "sample") {
                BenchSample s;
                s.repeat = std::stoul(r[1]);
                s.pattern_length = std::stoul(r[2]);
                s.time_ms = std::stod(r[6]);
                s.occurrences = std::stoull(r[7]);
                parsed.push_back(s);
            } else {
                REQUIRE(r[0] == "aggregate");
                BenchAggregate a;
                a.repeat = std::stoul(r[1]);
                a.pattern_length = std::stoul(r[2]);
                a.total_occurrences = std::stoull(r[7]);
                a.mean_ms = std::stod(r[8]);
                a.median_ms = std::stod(r[9]);
                a.mean_per_occ_ms = std::stod(r[10]);
                a.median_per_occ_ms = std::stod(r[11]);
                parsed_aggs[{a.repeat, a.pattern_length}] = a;
            }
        }
        auto from_rows = aggregate_samples(parsed);
        REQUIRE(from_rows.size() == parsed_aggs.size());
        for (const auto& a : from_rows) {
            const auto& b = parsed_aggs.at({a.repeat, a.pattern_length});
            CHECK(std::abs(a.mean_ms - b.mean_ms) < 1e-9);
            CHECK(std::abs(a.median_ms - b.median_ms) < 1e-9);
            CHECK(std::abs(a.mean_per_occ_ms - b.mean_per_occ_ms) < 1e-9);
            CHECK(std::abs(a.median_per_occ_ms - b.median_per_occ_ms) < 1e-9);
            CHECK(a.total_occurrences == b.total_occurrences);
        }
    }
}

TEST_CASE("fixed seed reproduces the sampled pattern set") {
    BenchFixture fx;
    BenchOptions opts;
    opts.pattern_lengths = {10};
    opts.patterns_per_length = 15;
    opts.seed = 99;
    opts.repeats = 1;
    auto a = run_bench(fx.index_path, fx.portfolio, fx.pack, opts);
    auto b = run_bench(fx.index_path, fx.portfolio, fx.pack, opts);
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].individual == b.samples[i].individual);
        CHECK(a.samples[i].position == b.samples[i].position);
        CHECK(a.samples[i].occurrences == b.samples[i].occurrences);
    }
}

TEST_CASE("concurrent bench mode returns identical occurrence counts") {
    BenchFixture fx;
    BenchOptions opts;
    opts.pattern_lengths = {12};
    opts.patterns_per_length = 12;
    opts.seed = 5;
    opts.repeats = 1;
    auto seq = run_bench(fx.index_path, fx.portfolio, fx.pack, opts);
    opts.concurrent = true;
    opts.concurrency = 4;
    auto conc = run_bench(fx.index_path, fx.portfolio, fx.pack, opts);
    REQUIRE(seq.samples.size() == conc.samples.size());
    for (size_t i = 0; i < seq.samples.size(); ++i)
        CHECK(seq.samples[i].occurrences == conc.samples[i].occurrences);
}

TEST_CASE("format_bench_table mentions the rng for reproducibility") {
    BenchFixture fx;
    BenchOptions opts;
    opts.pattern_lengths = {9};
    opts.patterns_per_length = 3;
    opts.repeats = 1;
    auto report = run_bench(fx.index_path, fx.portfolio, fx.pack, opts);
    auto table = format_bench_table(report);
    CHECK(table.find("mt19937_64") != std::string::npos);
    CHECK(table.find("ratio") != std::string::npos);
}
