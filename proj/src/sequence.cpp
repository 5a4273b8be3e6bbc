#include "erindex/sequence.hpp"

#include <cctype>
#include <fstream>
#include <random>

#include "erindex/errors.hpp"

namespace erindex {

FastaLoadResult load_fasta(const std::filesystem::path& path,
                           const std::string& id, const std::string& chromosome) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open FASTA file: " + path.string());

    FastaLoadResult result;
    result.sequence.id = id;
    result.sequence.chromosome = chromosome;
    std::string& out = result.sequence.data;

    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '>') {
            if (!saw_header && !out.empty())
                throw FormatError(path.string() + ": sequence data before FASTA header");
            saw_header = true;
            if (result.sequence.id.empty()) {
                auto name = line.substr(1);
                auto ws = name.find_first_of(" \t");
                result.sequence.id = name.substr(0, ws);
            }
            continue;
        }
        if (!saw_header)
            throw FormatError(path.string() + ": missing FASTA header line");
        for (char raw : line) {
            if (std::isspace(static_cast<unsigned char>(raw))) continue;
            char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
            if (!is_genomic_symbol(c)) {
                c = 'N';
                ++result.substituted;
            }
            out.push_back(c);
        }
    }
    if (!saw_header) throw FormatError(path.string() + ": missing FASTA header line");
    if (out.empty()) throw FormatError(path.string() + ": empty sequence body");
    return result;
}

void save_fasta(const std::filesystem::path& path, const Sequence& seq, size_t line_width) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write FASTA file: " + path.string());
    out << '>' << (seq.id.empty() ? "sequence" : seq.id);
    if (!seq.chromosome.empty()) out << ' ' << seq.chromosome;
    out << '\n';
    for (size_t i = 0; i < seq.data.size(); i += line_width)
        out << seq.data.substr(i, line_width) << '\n';
    if (!out) throw FormatError("short write: " + path.string());
}

void MutationProfile::validate() const {
    auto in_unit = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!in_unit(substitution_rate) || !in_unit(insertion_rate) || !in_unit(deletion_rate))
        throw std::invalid_argument("mutation rates must be in [0,1]");
    if (substitution_rate + insertion_rate + deletion_rate > 1.0)
        throw std::invalid_argument("combined mutation rate exceeds 1");
}

namespace {
constexpr char kBases[4] = {'A', 'C', 'G', 'T'};

char random_base(std::mt19937_64& rng) {
    return kBases[rng() & 3];
}

char random_other_base(std::mt19937_64& rng, char cur) {
    // Uniform over {A,C,G,T} minus the current symbol; an N substitutes to
    // any of the four.
    char c;
    do {
        c = random_base(rng);
    } while (c == cur);
    return c;
}
}  // namespace

Sequence mutate_reference(const Sequence& ref, const MutationProfile& profile,
                          const std::string& out_id) {
    profile.validate();
    if (ref.data.empty()) throw std::invalid_argument("reference sequence is empty");

    std::mt19937_64 rng(profile.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double sub = profile.substitution_rate;
    const double ins = sub + profile.insertion_rate;
    const double del = ins + profile.deletion_rate;

    Sequence out;
    out.id = out_id.empty() ? ref.id + "_mut" : out_id;
    out.chromosome = ref.chromosome;
    out.data.reserve(ref.data.size() + 16);
    for (char base : ref.data) {
        double u = unit(rng);
        if (u < sub) {
            out.data.push_back(random_other_base(rng, base));
        } else if (u < ins) {
            out.data.push_back(base);
            out.data.push_back(random_base(rng));
        } else if (u < del) {
            // base dropped
        } else {
            out.data.push_back(base);
        }
    }
    if (out.data.empty()) out.data.push_back(ref.data.front());
    return out;
}

}  // namespace erindex
