#include "erindex/erdb.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <fstream>

#include "erindex/errors.hpp"
#include "erindex/sequence.hpp"

namespace erindex {

namespace pt = boost::property_tree;

CatalogIndividual* Catalog::find_individual(const std::string& id) {
    for (auto& i : individuals)
        if (i.id == id) return &i;
    return nullptr;
}

CatalogUser* Catalog::find_user(const std::string& id) {
    for (auto& u : users)
        if (u.id == id) return &u;
    return nullptr;
}

CatalogReference* Catalog::find_reference(const std::string& chromosome) {
    for (auto& r : references)
        if (r.chromosome == chromosome) return &r;
    return nullptr;
}

Catalog read_catalog(const std::filesystem::path& path) {
    pt::ptree tree;
    try {
        pt::read_xml(path.string(), tree, pt::xml_parser::trim_whitespace);
    } catch (const pt::xml_parser_error& e) {
        throw FormatError(std::string("cannot parse catalog: ") + e.what());
    }

    Catalog cat;
    const auto root = tree.get_child_optional("catalog");
    if (!root) throw FormatError("catalog.xml is missing the <catalog> root");

    if (auto inds = root->get_child_optional("individuals"))
        for (const auto& [tag, node] : *inds) {
            if (tag != "individual") continue;
            CatalogIndividual ind;
            ind.id = node.get<std::string>("<xmlattr>.id");
            ind.label = node.get<std::string>("<xmlattr>.label", "");
            for (const auto& [stag, snode] : node)
                if (stag == "sequence")
                    ind.sequence_paths[snode.get<std::string>("<xmlattr>.chromosome")] =
                        snode.get<std::string>("<xmlattr>.path");
            cat.individuals.push_back(std::move(ind));
        }
    if (auto users = root->get_child_optional("users"))
        for (const auto& [tag, node] : *users) {
            if (tag != "user") continue;
            cat.users.push_back({node.get<std::string>("<xmlattr>.id"),
                                 node.get<std::string>("<xmlattr>.public_key", "")});
        }
    if (auto refs = root->get_child_optional("references"))
        for (const auto& [tag, node] : *refs) {
            if (tag != "reference") continue;
            CatalogReference ref;
            ref.chromosome = node.get<std::string>("<xmlattr>.chromosome");
            ref.fasta_path = node.get<std::string>("<xmlattr>.fasta", "");
            ref.index_path = node.get<std::string>("<xmlattr>.index", "");
            ref.er_index_path = node.get<std::string>("<xmlattr>.er_index", "");
            ref.fasta_sha256 = node.get<std::string>("<xmlattr>.fasta_sha256", "");
            cat.references.push_back(std::move(ref));
        }
    if (auto grants = root->get_child_optional("grants"))
        for (const auto& [tag, node] : *grants) {
            if (tag != "grant") continue;
            cat.grants[node.get<std::string>("<xmlattr>.user")].insert(
                node.get<std::string>("<xmlattr>.individual"));
        }
    return cat;
}

void write_catalog(const std::filesystem::path& path, const Catalog& cat) {
    pt::ptree root;
    pt::ptree& c = root.put_child("catalog", pt::ptree{});

    pt::ptree inds;
    for (const auto& i : cat.individuals) {
        pt::ptree node;
        node.put("<xmlattr>.id", i.id);
        if (!i.label.empty()) node.put("<xmlattr>.label", i.label);
        for (const auto& [chrom, p] : i.sequence_paths) {
            pt::ptree seq;
            seq.put("<xmlattr>.chromosome", chrom);
            seq.put("<xmlattr>.path", p);
            node.add_child("sequence", seq);
        }
        inds.add_child("individual", node);
    }
    c.add_child("individuals", inds);

    pt::ptree users;
    for (const auto& u : cat.users) {
        pt::ptree node;
        node.put("<xmlattr>.id", u.id);
        if (!u.public_key_path.empty()) node.put("<xmlattr>.public_key", u.public_key_path);
        users.add_child("user", node);
    }
    c.add_child("users", users);

    pt::ptree refs;
    for (const auto& r : cat.references) {
        pt::ptree node;
        node.put("<xmlattr>.chromosome", r.chromosome);
        if (!r.fasta_path.empty()) node.put("<xmlattr>.fasta", r.fasta_path);
        if (!r.index_path.empty()) node.put("<xmlattr>.index", r.index_path);
        if (!r.er_index_path.empty()) node.put("<xmlattr>.er_index", r.er_index_path);
        if (!r.fasta_sha256.empty()) node.put("<xmlattr>.fasta_sha256", r.fasta_sha256);
        refs.add_child("reference", node);
    }
    c.add_child("references", refs);

    pt::ptree grants;
    for (const auto& [user, set] : cat.grants)
        for (const auto& ind : set) {
            pt::ptree node;
            node.put("<xmlattr>.user", user);
            node.put("<xmlattr>.individual", ind);
            grants.add_child("grant", node);
        }
    c.add_child("grants", grants);

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write catalog: " + tmp.string());
        pt::write_xml(out, root,
                      pt::xml_writer_settings<std::string>(' ', 2));
        if (!out) throw FormatError("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string sha256_file_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read file: " + path.string());
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    auto digest = sha256(data);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (uint8_t b : digest) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 15]);
    }
    return out;
}

// --- database ----------------------------------------------------------------

namespace {

SymmetricKey read_key_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CryptoError("cannot read key file: " + path.string());
    SymmetricKey key;
    in.read(reinterpret_cast<char*>(key.bytes.data()), key.bytes.size());
    if (in.gcount() != static_cast<std::streamsize>(key.bytes.size()))
        throw CryptoError("truncated key file: " + path.string());
    return key;
}

void write_key_file(const std::filesystem::path& path, const SymmetricKey& key) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CryptoError("cannot write key file: " + path.string());
    out.write(reinterpret_cast<const char*>(key.bytes.data()), key.bytes.size());
    std::filesystem::permissions(path,
                                 std::filesystem::perms::owner_read |
                                     std::filesystem::perms::owner_write,
                                 std::filesystem::perm_options::replace);
}

}  // namespace

ErDatabase::ErDatabase(std::filesystem::path root, Catalog catalog)
    : root_(std::move(root)), catalog_(std::move(catalog)) {}

ErDatabase ErDatabase::init(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (fs::exists(root / "catalog.xml"))
        throw CatalogError("database already initialized at " + root.string());
    fs::create_directories(root / "references");
    fs::create_directories(root / "indexes");
    fs::create_directories(root / "security" / "keys");
    fs::create_directories(root / "security" / "individuals");
    write_key_file(root / "security" / "system.key", generate_key());

    ErDatabase db(root, Catalog{});
    db.persist();
    return db;
}

ErDatabase ErDatabase::open(const std::filesystem::path& root) {
    if (!std::filesystem::exists(root / "catalog.xml"))
        throw CatalogError("no ER-database at " + root.string());
    return ErDatabase(root, read_catalog(root / "catalog.xml"));
}

void ErDatabase::persist() { write_catalog(root_ / "catalog.xml", catalog_); }

SymmetricKey ErDatabase::system_key() const {
    return read_key_file(root_ / "security" / "system.key");
}

SymmetricKey ErDatabase::individual_key(const std::string& id) const {
    return read_key_file(root_ / "security" / "individuals" / (id + ".key"));
}

std::filesystem::path ErDatabase::portfolio_path(const std::string& user_id) const {
    return root_ / "security" / (user_id + ".portfolio");
}
std::filesystem::path ErDatabase::public_key_path(const std::string& user_id) const {
    return root_ / "security" / "keys" / (user_id + ".pub.pem");
}
std::filesystem::path ErDatabase::private_key_path(const std::string& user_id) const {
    return root_ / "security" / "keys" / (user_id + ".key.pem");
}

void ErDatabase::add_individual(const std::string& id, const std::string& label) {
    if (catalog_.find_individual(id)) throw CatalogError("duplicate individual id: " + id);
    write_key_file(root_ / "security" / "individuals" / (id + ".key"), generate_key());
    catalog_.individuals.push_back({id, label, {}});
    persist();
}

void ErDatabase::add_user(const std::string& id) {
    if (catalog_.find_user(id)) throw CatalogError("duplicate user id: " + id);
    auto pair = generate_user_keypair();
    write_pem(public_key_path(id), pair.public_pem);
    write_pem(private_key_path(id), pair.private_pem);

    KeyPortfolio p;
    p.user_id = id;
    p.system_key = system_key();
    save_portfolio(portfolio_path(id), p, pair.public_pem);

    catalog_.users.push_back(
        {id, std::filesystem::relative(public_key_path(id), root_).string()});
    persist();
}

void ErDatabase::add_reference(const std::string& chromosome,
                               const std::filesystem::path& fasta_src) {
    if (catalog_.find_reference(chromosome))
        throw CatalogError("duplicate reference: " + chromosome);
    if (!std::filesystem::exists(fasta_src))
        throw CatalogError("reference FASTA not found: " + fasta_src.string());
    auto dst = root_ / "references" / (chromosome + ".fasta");
    std::filesystem::copy_file(fasta_src, dst,
                               std::filesystem::copy_options::overwrite_existing);
    CatalogReference ref;
    ref.chromosome = chromosome;
    ref.fasta_path = std::filesystem::relative(dst, root_).string();
    ref.fasta_sha256 = sha256_file_hex(dst);
    catalog_.references.push_back(std::move(ref));
    persist();
}

void ErDatabase::enroll_sequence(const std::string& individual_id, const std::string& chromosome,
                                 const std::filesystem::path& fasta) {
    auto* ind = catalog_.find_individual(individual_id);
    if (!ind) throw CatalogError("unregistered individual: " + individual_id);
    if (!catalog_.find_reference(chromosome))
        throw CatalogError("unregistered reference: " + chromosome);
    if (!std::filesystem::exists(fasta))
        throw CatalogError("sequence FASTA not found: " + fasta.string());
    ind->sequence_paths[chromosome] = std::filesystem::absolute(fasta).string();
    persist();
}

void ErDatabase::reseal_portfolio(const std::string& user_id) {
    save_portfolio(portfolio_path(user_id), assemble_portfolio(user_id),
                   read_pem(public_key_path(user_id)));
}

void ErDatabase::grant(const std::string& user_id, const std::string& individual_id) {
    if (!catalog_.find_user(user_id)) throw CatalogError("unknown user: " + user_id);
    if (!catalog_.find_individual(individual_id))
        throw CatalogError("unknown individual: " + individual_id);
    if (!std::filesystem::exists(public_key_path(user_id)))
        throw CatalogError("missing public key for user: " + user_id);
    catalog_.grants[user_id].insert(individual_id);
    reseal_portfolio(user_id);
    persist();
}

void ErDatabase::ungrant(const std::string&, const std::string&) {
    throw CatalogError("grants are append-only: revocation is not supported");
}

KeyPortfolio ErDatabase::assemble_portfolio(const std::string& user_id) const {
    KeyPortfolio p;
    p.user_id = user_id;
    p.system_key = system_key();
    auto it = catalog_.grants.find(user_id);
    if (it != catalog_.grants.end())
        for (const auto& ind : it->second) p.individual_keys[ind] = individual_key(ind);
    return p;
}

KeyPortfolio ErDatabase::admin_portfolio() const {
    KeyPortfolio p;
    p.user_id = "<admin>";
    p.system_key = system_key();
    for (const auto& ind : catalog_.individuals)
        p.individual_keys[ind.id] = individual_key(ind.id);
    return p;
}

void ErDatabase::build_reference(const std::string& chromosome, uint32_t sample_rate) {
    auto* ref = catalog_.find_reference(chromosome);
    if (!ref) throw CatalogError("unregistered reference: " + chromosome);
    auto fasta = root_ / ref->fasta_path;
    auto loaded = load_fasta(fasta, chromosome, chromosome);
    auto pack = ReferencePack::build(loaded.sequence.data, sample_rate);
    auto out = root_ / "references" / (chromosome + ".erfm");
    pack.save(out);
    ref->index_path = std::filesystem::relative(out, root_).string();
    ref->fasta_sha256 = sha256_file_hex(fasta);
    persist();
}

std::shared_ptr<const ReferencePack> ErDatabase::reference_pack(
    const std::string& chromosome) const {
    auto catalog = catalog_;  // const accessor; work on a copy
    auto* ref = catalog.find_reference(chromosome);
    if (!ref || ref->index_path.empty())
        throw CatalogError("reference index not built for: " + chromosome);
    return std::make_shared<ReferencePack>(ReferencePack::load(root_ / ref->index_path));
}

std::filesystem::path ErDatabase::er_index_path(const std::string& chromosome) const {
    return root_ / "indexes" / (chromosome + ".eri");
}

NonceLedger ErDatabase::build_population_index(const std::string& chromosome,
                                               std::vector<std::string> individual_ids,
                                               uint32_t block_size, unsigned workers) {
    auto* ref = catalog_.find_reference(chromosome);
    if (!ref) throw CatalogError("unregistered reference: " + chromosome);
    if (ref->index_path.empty())
        throw CatalogError("reference index not built for: " + chromosome);
    if (ref->fasta_sha256 != sha256_file_hex(root_ / ref->fasta_path))
        throw CatalogError("stale reference for " + chromosome +
                           ": FASTA changed since the index was built, rebuild required");

    if (individual_ids.empty())
        for (const auto& ind : catalog_.individuals)
            if (ind.sequence_paths.count(chromosome)) individual_ids.push_back(ind.id);
    if (individual_ids.empty())
        throw CatalogError("no individuals enrolled for chromosome " + chromosome);

    std::vector<Sequence> collection;
    std::map<std::string, SymmetricKey> keys;
    for (const auto& id : individual_ids) {
        auto* ind = catalog_.find_individual(id);
        if (!ind) throw CatalogError("unregistered individual: " + id);
        auto it = ind->sequence_paths.find(chromosome);
        if (it == ind->sequence_paths.end())
            throw CatalogError("individual '" + id + "' has no sequence for " + chromosome);
        auto loaded = load_fasta(it->second, id, chromosome);
        collection.push_back(std::move(loaded.sequence));
        keys[id] = individual_key(id);
    }

    auto pack = reference_pack(chromosome);
    auto index = ErIndex::build(collection, pack, chromosome, keys, block_size, workers);

    NonceLedger ledger;
    index.save(er_index_path(chromosome), admin_portfolio(), &ledger);
    ref->er_index_path = std::filesystem::relative(er_index_path(chromosome), root_).string();
    persist();
    return ledger;
}

}  // namespace erindex
