#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <thread>

#include "erindex/bench.hpp"
#include "erindex/erdb.hpp"
#include "erindex/errors.hpp"
#include "erindex/sequence.hpp"

using namespace erindex;

namespace {

bool valid_pattern(const std::string& pattern) {
    if (pattern.empty()) return false;
    for (char c : pattern)
        if (!is_genomic_symbol(c)) return false;
    return true;
}

/// Resolves the querying user's portfolio: sealed portfolio + private key
/// when --user/--key are given, otherwise the server-side admin portfolio.
KeyPortfolio resolve_portfolio(ErDatabase& db, const std::string& user,
                               const std::string& key_path) {
    if (user.empty()) return db.admin_portfolio();
    auto pem = read_pem(key_path.empty() ? db.private_key_path(user)
                                         : std::filesystem::path(key_path));
    return load_portfolio(db.portfolio_path(user), pem);
}

std::vector<uint32_t> parse_lengths(const std::string& csv) {
    std::vector<uint32_t> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(static_cast<uint32_t>(std::stoul(csv.substr(pos, comma - pos))));
        pos = comma + 1;
    }
    if (out.empty()) throw CLI::ValidationError("--lengths", "no pattern lengths given");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"erindex - encrypted referential full-text index over genomic collections"};
    app.require_subcommand(1);

    std::string db_root = ".";
    std::string user;
    std::string key_path;
    app.add_option("--db", db_root, "database root directory")->capture_default_str();
    app.add_option("--user", user, "database user id (default: server-side admin keys)");
    app.add_option("--key", key_path, "user private key path (default: security/keys/<user>.key.pem)");

    // init
    auto* init = app.add_subcommand("init", "create an empty ER-database");

    // keygen user <id> | keygen individual <id>
    auto* keygen = app.add_subcommand("keygen", "generate keys for a user or an individual");
    std::string kg_kind, kg_id, kg_label;
    keygen->add_option("kind", kg_kind, "'user' or 'individual'")->required();
    keygen->add_option("id", kg_id, "identifier")->required();
    keygen->add_option("--label", kg_label, "individual label");

    // grant <user> <individual>
    auto* grant = app.add_subcommand("grant", "grant a user access to an individual");
    std::string gr_user, gr_ind;
    grant->add_option("user", gr_user)->required();
    grant->add_option("individual", gr_ind)->required();

    // add-ref
    auto* add_ref = app.add_subcommand("add-ref", "register a reference sequence");
    std::string ar_chrom, ar_fasta;
    add_ref->add_option("--chromosome", ar_chrom)->required();
    add_ref->add_option("--fasta", ar_fasta)->required();

    // enroll
    auto* enroll = app.add_subcommand("enroll", "attach an individual's sequence file");
    std::string en_ind, en_chrom, en_fasta;
    enroll->add_option("--individual", en_ind)->required();
    enroll->add_option("--chromosome", en_chrom)->required();
    enroll->add_option("--fasta", en_fasta)->required();

    // build
    auto* build = app.add_subcommand("build", "build the reference and population indexes");
    std::string b_chrom;
    uint32_t b_bs = kDefaultBlockSize;
    uint32_t b_rate = kDefaultSampleRate;
    unsigned b_workers = std::max(1u, std::thread::hardware_concurrency());
    bool b_ref_only = false;
    build->add_option("--chromosome", b_chrom)->required();
    build->add_option("--bs", b_bs, "factors per encrypted block")->capture_default_str();
    build->add_option("--sample-rate", b_rate, "FM marked-row sample rate")->capture_default_str();
    build->add_option("--workers", b_workers, "factorization threads")->capture_default_str();
    build->add_flag("--reference-only", b_ref_only, "build only the reference index");

    // locate
    auto* locate = app.add_subcommand("locate", "search a pattern; prints individual<TAB>position");
    std::string l_chrom, l_pattern;
    locate->add_option("--chromosome", l_chrom)->required();
    locate->add_option("--pattern", l_pattern)->required();

    // extract
    auto* extract = app.add_subcommand("extract", "extract a sequence slice from the index");
    std::string x_chrom, x_ind;
    uint64_t x_start = 0, x_length = 0;
    extract->add_option("--chromosome", x_chrom)->required();
    extract->add_option("--individual", x_ind)->required();
    extract->add_option("--start", x_start)->required();
    extract->add_option("--length", x_length)->required();

    // stats
    auto* stats = app.add_subcommand("stats", "index size breakdown and compression ratio");
    std::string s_chrom;
    stats->add_option("--chromosome", s_chrom)->required();

    // bench
    auto* bench = app.add_subcommand("bench", "locate benchmark; emits a CSV of raw samples");
    std::string be_chrom, be_lengths = "20,50,100,200,500", be_csv = "bench.csv";
    BenchOptions be_opts;
    bench->add_option("--chromosome", be_chrom)->required();
    bench->add_option("--lengths", be_lengths, "comma-separated pattern lengths")
        ->capture_default_str();
    bench->add_option("--patterns", be_opts.patterns_per_length, "patterns per length")
        ->capture_default_str();
    bench->add_option("--seed", be_opts.seed, "pattern sampling seed")->capture_default_str();
    bench->add_option("--repeat", be_opts.repeats, "benchmark repetitions")->capture_default_str();
    bench->add_option("--csv", be_csv, "output CSV path")->capture_default_str();
    bench->add_flag("--concurrent", be_opts.concurrent, "run queries concurrently");

    // gen-population
    auto* gen = app.add_subcommand("gen-population",
                                   "generate synthetic individuals by mutating a reference");
    std::string g_ref, g_out;
    uint32_t g_count = 10;
    MutationProfile g_profile;
    gen->add_option("--ref", g_ref, "reference FASTA")->required();
    gen->add_option("--count", g_count, "individuals to generate")->capture_default_str();
    gen->add_option("--sub", g_profile.substitution_rate, "substitution rate per base")
        ->capture_default_str();
    gen->add_option("--ins", g_profile.insertion_rate, "insertion rate per base")
        ->capture_default_str();
    gen->add_option("--del", g_profile.deletion_rate, "deletion rate per base")
        ->capture_default_str();
    gen->add_option("--seed", g_profile.seed, "RNG seed")->capture_default_str();
    gen->add_option("--out", g_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (init->parsed()) {
            ErDatabase::init(db_root);
            std::cout << "initialized ER-database at " << db_root << "\n";
            return 0;
        }
        if (gen->parsed()) {
            g_profile.validate();
            auto loaded = load_fasta(g_ref);
            if (loaded.substituted)
                std::cerr << "warning: " << loaded.substituted
                          << " non-ACGTN symbols normalized to N\n";
            std::filesystem::create_directories(g_out);
            std::cout << "rng: " << kMutationRngName << " base seed " << g_profile.seed << "\n";
            for (uint32_t k = 0; k < g_count; ++k) {
                MutationProfile p = g_profile;
                p.seed = g_profile.seed + k;
                std::string id = "ind" + std::to_string(k);
                auto seq = mutate_reference(loaded.sequence, p, id);
                save_fasta(std::filesystem::path(g_out) / (id + ".fasta"), seq);
            }
            std::cout << "wrote " << g_count << " mutated sequences to " << g_out << "\n";
            return 0;
        }

        if (keygen->parsed()) {
            auto db = ErDatabase::open(db_root);
            if (kg_kind == "user") {
                db.add_user(kg_id);
                std::cout << "user " << kg_id << ": keypair at "
                          << db.public_key_path(kg_id).string() << ", portfolio at "
                          << db.portfolio_path(kg_id).string() << "\n";
            } else if (kg_kind == "individual") {
                db.add_individual(kg_id, kg_label);
                std::cout << "individual " << kg_id << ": key generated\n";
            } else {
                throw CLI::ValidationError("keygen", "kind must be 'user' or 'individual'");
            }
            return 0;
        }
        if (grant->parsed()) {
            auto db = ErDatabase::open(db_root);
            db.grant(gr_user, gr_ind);
            std::cout << "granted " << gr_user << " access to " << gr_ind << "\n";
            return 0;
        }
        if (add_ref->parsed()) {
            auto db = ErDatabase::open(db_root);
            db.add_reference(ar_chrom, ar_fasta);
            std::cout << "registered reference " << ar_chrom << "\n";
            return 0;
        }
        if (enroll->parsed()) {
            auto db = ErDatabase::open(db_root);
            db.enroll_sequence(en_ind, en_chrom, en_fasta);
            std::cout << "enrolled " << en_ind << " for " << en_chrom << "\n";
            return 0;
        }
        if (build->parsed()) {
            auto db = ErDatabase::open(db_root);
            auto t0 = std::chrono::steady_clock::now();
            db.build_reference(b_chrom, b_rate);
            if (!b_ref_only) db.build_population_index(b_chrom, {}, b_bs, b_workers);
            double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cout << "built " << (b_ref_only ? "reference index" : "reference + ER-index")
                      << " for " << b_chrom << " in " << secs << " s\n";
            return 0;
        }

        if (locate->parsed()) {
            if (!valid_pattern(l_pattern)) {
                std::cerr << "error: pattern must be a nonempty string over A,C,G,T,N\n";
                return 2;
            }
            auto db = ErDatabase::open(db_root);
            auto portfolio = resolve_portfolio(db, user, key_path);
            auto index = OpenedErIndex::open(db.er_index_path(l_chrom), portfolio,
                                             db.reference_pack(l_chrom));
            auto occs = index->locate(l_pattern);
            for (const auto& occ : occs)
                std::cout << occ.individual_id << '\t' << occ.text_position << '\n';
            return occs.empty() ? 1 : 0;
        }
        if (extract->parsed()) {
            auto db = ErDatabase::open(db_root);
            auto portfolio = resolve_portfolio(db, user, key_path);
            auto index = OpenedErIndex::open(db.er_index_path(x_chrom), portfolio,
                                             db.reference_pack(x_chrom));
            std::cout << index->extract_text(x_ind, x_start, x_length) << '\n';
            return 0;
        }
        if (stats->parsed()) {
            auto db = ErDatabase::open(db_root);
            auto portfolio = resolve_portfolio(db, user, key_path);
            auto index = OpenedErIndex::open(db.er_index_path(s_chrom), portfolio,
                                             db.reference_pack(s_chrom));
            auto sz = index->section_sizes();
            std::cout << "individuals: " << index->individual_ids().size() << "\n"
                      << "input bytes: " << index->total_source_bytes() << "\n"
                      << "index bytes: " << sz.file << "\n"
                      << "compression ratio: "
                      << static_cast<double>(sz.file) / index->total_source_bytes() << "\n"
                      << "header: " << sz.header << "\n"
                      << "factorizations: " << sz.factorizations << "\n"
                      << "reverse tree: " << sz.reverse_tree << "\n"
                      << "forward tree: " << sz.forward_tree << "\n"
                      << "pos tree: " << sz.pos_tree << "\n";
            return 0;
        }
        if (bench->parsed()) {
            auto db = ErDatabase::open(db_root);
            auto portfolio = resolve_portfolio(db, user, key_path);
            be_opts.pattern_lengths = parse_lengths(be_lengths);
            auto report = run_bench(db.er_index_path(be_chrom), portfolio,
                                    db.reference_pack(be_chrom), be_opts);
            write_bench_csv(be_csv, report);
            std::cout << format_bench_table(report);
            std::cout << "raw samples: " << be_csv << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
