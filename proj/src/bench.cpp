#include "erindex/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "erindex/errors.hpp"
#include "erindex/sequence.hpp"

namespace erindex {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : (v[mid - 1] + v[mid]) / 2.0;
}

struct SampledPattern {
    std::string text;
    std::string individual;
    uint64_t position;
};

}  // namespace

std::vector<BenchAggregate> aggregate_samples(const std::vector<BenchSample>& samples) {
    std::map<std::pair<uint32_t, uint32_t>, std::vector<const BenchSample*>> groups;
    for (const auto& s : samples) groups[{s.repeat, s.pattern_length}].push_back(&s);

    std::vector<BenchAggregate> out;
    for (const auto& [key, rows] : groups) {
        BenchAggregate agg;
        agg.repeat = key.first;
        agg.pattern_length = key.second;
        std::vector<double> times, per_occ;
        for (const auto* s : rows) {
            times.push_back(s->time_ms);
            per_occ.push_back(s->time_ms / static_cast<double>(s->occurrences));
            agg.total_occurrences += s->occurrences;
        }
        double sum = 0, sum_po = 0;
        for (double t : times) sum += t;
        for (double t : per_occ) sum_po += t;
        agg.mean_ms = sum / static_cast<double>(times.size());
        agg.mean_per_occ_ms = sum_po / static_cast<double>(per_occ.size());
        agg.median_ms = median(times);
        agg.median_per_occ_ms = median(per_occ);
        out.push_back(agg);
    }
    return out;
}

BenchReport run_bench(const std::filesystem::path& index_path, const KeyPortfolio& portfolio,
                      std::shared_ptr<const ReferencePack> ref, const BenchOptions& options) {
    BenchReport report;
    report.collection_id = index_path.stem().string();
    report.rng_description = std::string(kMutationRngName) + " seed=" + std::to_string(options.seed);

    // Sample patterns once (fixed seed -> identical pattern set per repeat),
    // through a scratch open that does not warm the timed instance.
    std::vector<SampledPattern> patterns;
    {
        auto scratch = OpenedErIndex::open(index_path, portfolio, ref);
        report.sections = scratch->section_sizes();
        report.index_bytes = report.sections.file;
        report.input_bytes = scratch->total_source_bytes();
        report.compression_ratio =
            static_cast<double>(report.index_bytes) / static_cast<double>(report.input_bytes);

        const auto& slots = scratch->authorized_slots();
        if (slots.empty()) throw CryptoError("portfolio authorizes no individual in this index");
        std::mt19937_64 rng(options.seed);
        for (uint32_t pl : options.pattern_lengths) {
            for (uint32_t i = 0; i < options.patterns_per_length; ++i) {
                uint32_t slot = slots[rng() % slots.size()];
                const std::string& id = scratch->individual_id(slot);
                uint64_t source_len = scratch->source_length(slot);
                if (source_len < pl)
                    throw std::invalid_argument("pattern length exceeds sequence length");
                uint64_t pos = rng() % (source_len - pl + 1);
                patterns.push_back({scratch->extract_text(id, pos, pl), id, pos});
            }
        }
    }

    for (uint32_t rep = 0; rep < options.repeats; ++rep) {
        // Fresh open per repeat: the first queries pay the lazy decryption,
        // matching the measurement protocol.
        auto index = OpenedErIndex::open(index_path, portfolio, ref);
        std::vector<BenchSample> rep_samples(patterns.size());

        auto run_one = [&](size_t p) {
            const SampledPattern& pat = patterns[p];
            auto t0 = std::chrono::steady_clock::now();
            auto occs = index->locate(pat.text);
            auto t1 = std::chrono::steady_clock::now();
            if (occs.empty())
                throw std::logic_error("sampled pattern not found; index is inconsistent");
            BenchSample s;
            s.repeat = rep;
            s.pattern_length = static_cast<uint32_t>(pat.text.size());
            s.pattern_index = static_cast<uint32_t>(p);
            s.individual = pat.individual;
            s.position = pat.position;
            s.time_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            s.occurrences = occs.size();
            rep_samples[p] = s;
        };

        if (!options.concurrent) {
            for (size_t p = 0; p < patterns.size(); ++p) run_one(p);
        } else {
            std::atomic<size_t> next{0};
            auto worker = [&] {
                for (size_t p = next.fetch_add(1); p < patterns.size(); p = next.fetch_add(1))
                    run_one(p);
            };
            std::vector<std::thread> pool;
            for (unsigned t = 1; t < std::max(1u, options.concurrency); ++t)
                pool.emplace_back(worker);
            worker();
            for (auto& t : pool) t.join();
        }
        report.samples.insert(report.samples.end(), rep_samples.begin(), rep_samples.end());
    }

    report.aggregates = aggregate_samples(report.samples);
    return report;
}

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write CSV: " + path.string());
    out.precision(17);
    out << "type,repeat,pl,pattern_index,individual,position,time_ms,occurrences,"
           "mean_ms,median_ms,mean_per_occ_ms,median_per_occ_ms\n";
    for (const auto& s : report.samples)
        out << "sample," << s.repeat << ',' << s.pattern_length << ',' << s.pattern_index << ','
            << s.individual << ',' << s.position << ',' << s.time_ms << ',' << s.occurrences
            << ",,,,\n";
    for (const auto& a : report.aggregates)
        out << "aggregate," << a.repeat << ',' << a.pattern_length << ",,,,,"
            << a.total_occurrences << ',' << a.mean_ms << ',' << a.median_ms << ','
            << a.mean_per_occ_ms << ',' << a.median_per_occ_ms << '\n';
    if (!out) throw FormatError("short write: " + path.string());
}

std::string format_bench_table(const BenchReport& report) {
    std::ostringstream os;
    os << "collection: " << report.collection_id << "  (rng: " << report.rng_description << ")\n";
    os << "input bytes: " << report.input_bytes << "  index bytes: " << report.index_bytes
       << "  ratio: " << report.compression_ratio << "\n";
    os << "sections (bytes): header " << report.sections.header << ", factorizations "
       << report.sections.factorizations << ", reverse tree " << report.sections.reverse_tree
       << ", forward tree " << report.sections.forward_tree << ", pos tree "
       << report.sections.pos_tree << "\n";
    if (report.build_time_s > 0) os << "build time (s): " << report.build_time_s << "\n";
    os << "repeat  pl   mean_ms    median_ms  mean/occ_ms  median/occ_ms  occs\n";
    for (const auto& a : report.aggregates) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-7u %-4u %-10.3f %-10.3f %-12.4f %-14.4f %llu\n",
                      a.repeat, a.pattern_length, a.mean_ms, a.median_ms, a.mean_per_occ_ms,
                      a.median_per_occ_ms,
                      static_cast<unsigned long long>(a.total_occurrences));
        os << line;
    }
    return os.str();
}

}  // namespace erindex
