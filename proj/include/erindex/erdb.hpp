#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "erindex/crypto.hpp"
#include "erindex/erindex.hpp"

namespace erindex {

// catalog.xml schema (documented in the README):
//   <catalog>
//     <individuals><individual id label><sequence chromosome path/></individual></individuals>
//     <users><user id public_key/></users>
//     <references><reference chromosome fasta index er_index fasta_sha256/></references>
//     <grants><grant user individual/></grants>
//   </catalog>

struct CatalogIndividual {
    std::string id;
    std::string label;
    std::map<std::string, std::string> sequence_paths;  // chromosome -> FASTA path
};

struct CatalogUser {
    std::string id;
    std::string public_key_path;
};

struct CatalogReference {
    std::string chromosome;
    std::string fasta_path;
    std::string index_path;     // reference FM pack (empty until built)
    std::string er_index_path;  // population ER-index (empty until built)
    std::string fasta_sha256;
};

struct Catalog {
    std::vector<CatalogIndividual> individuals;
    std::vector<CatalogUser> users;
    std::vector<CatalogReference> references;
    std::map<std::string, std::set<std::string>> grants;  // user -> individuals

    CatalogIndividual* find_individual(const std::string& id);
    CatalogUser* find_user(const std::string& id);
    CatalogReference* find_reference(const std::string& chromosome);
};

Catalog read_catalog(const std::filesystem::path& path);
/// Whole-file atomic replace (write to a temp file, then rename).
void write_catalog(const std::filesystem::path& path, const Catalog& catalog);

/// ER-database root: catalog.xml plus the references/, indexes/ and
/// security/ subdirectories. Mutations rewrite the catalog atomically;
/// single writer, concurrent readers.
class ErDatabase {
public:
    /// Creates the directory skeleton, an empty catalog and the system key.
    static ErDatabase init(const std::filesystem::path& root);
    static ErDatabase open(const std::filesystem::path& root);

    const std::filesystem::path& root() const { return root_; }
    const Catalog& catalog() const { return catalog_; }

    void add_individual(const std::string& id, const std::string& label = "");
    /// Generates the user's RSA pair and an initial portfolio holding only
    /// the system key.
    void add_user(const std::string& id);
    void add_reference(const std::string& chromosome, const std::filesystem::path& fasta_src);
    /// Registers the FASTA holding this individual's sequence for one
    /// chromosome (consumed at build time; the database never stores the
    /// plaintext sequence).
    void enroll_sequence(const std::string& individual_id, const std::string& chromosome,
                         const std::filesystem::path& fasta);
    /// Appends the grant and re-seals the user's portfolio with the
    /// individual's key included.
    void grant(const std::string& user_id, const std::string& individual_id);
    /// Grants are append-only.
    [[noreturn]] void ungrant(const std::string& user_id, const std::string& individual_id);

    /// Builds (or rebuilds) FM/FM_rev/tables for a registered reference.
    void build_reference(const std::string& chromosome,
                         uint32_t sample_rate = kDefaultSampleRate);
    /// Factorizes the enrolled individuals against the reference and writes
    /// the ER-index under indexes/. Empty `individual_ids` means everyone
    /// enrolled for that chromosome. Returns the nonce ledger of the save.
    NonceLedger build_population_index(const std::string& chromosome,
                                       std::vector<std::string> individual_ids = {},
                                       uint32_t block_size = kDefaultBlockSize,
                                       unsigned workers = 1);

    std::shared_ptr<const ReferencePack> reference_pack(const std::string& chromosome) const;
    std::filesystem::path er_index_path(const std::string& chromosome) const;

    /// Server-side keystore access (trusted-host model): the portfolio a
    /// user would hold, assembled from granted keys. Used by build/admin
    /// flows and tests; end users open their sealed portfolio instead.
    KeyPortfolio assemble_portfolio(const std::string& user_id) const;
    /// Portfolio holding the system key and every individual key.
    KeyPortfolio admin_portfolio() const;

    std::filesystem::path portfolio_path(const std::string& user_id) const;
    std::filesystem::path public_key_path(const std::string& user_id) const;
    std::filesystem::path private_key_path(const std::string& user_id) const;

    SymmetricKey system_key() const;
    SymmetricKey individual_key(const std::string& id) const;

private:
    ErDatabase(std::filesystem::path root, Catalog catalog);
    void persist();
    void reseal_portfolio(const std::string& user_id);

    std::filesystem::path root_;
    Catalog catalog_;
};

std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace erindex
