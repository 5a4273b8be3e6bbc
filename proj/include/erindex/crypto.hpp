#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace erindex {

/// 256-bit symmetric key.
struct SymmetricKey {
    std::array<uint8_t, 32> bytes{};

    bool operator==(const SymmetricKey&) const = default;
    /// Short stable identifier used by the nonce ledger and diagnostics.
    uint64_t fingerprint() const;
};

/// Uniform random key from the OS entropy source.
SymmetricKey generate_key();

/// Salsa20/20 keystream for (key, nonce), starting at byte `offset`.
std::vector<uint8_t> salsa20_keystream(const SymmetricKey& key, uint64_t nonce,
                                       uint64_t length, uint64_t offset = 0);

/// Records every (key, nonce) pair opened while saving an index and refuses
/// duplicates: one keystream must never cover two plaintext segments.
class NonceLedger {
public:
    void record(const SymmetricKey& key, uint64_t nonce);
    size_t size() const { return used_.size(); }
    void reset() { used_.clear(); }

private:
    std::set<std::pair<uint64_t, uint64_t>> used_;
};

/// Sequential Salsa20 stream over one (key, nonce): repeated apply() calls
/// consume consecutive keystream bytes. XOR is an involution, so the same
/// context sequence encrypts and decrypts.
class EncryptionContext {
public:
    EncryptionContext(const SymmetricKey& key, uint64_t nonce, NonceLedger* ledger = nullptr);

    void apply(uint8_t* data, size_t len);
    std::vector<uint8_t> apply_copy(const uint8_t* data, size_t len);
    std::vector<uint8_t> apply_copy(const std::vector<uint8_t>& data) {
        return apply_copy(data.data(), data.size());
    }

    uint64_t stream_offset() const { return offset_; }

private:
    SymmetricKey key_;
    uint64_t nonce_;
    uint64_t offset_ = 0;
};

/// SHA-256 of a byte buffer.
std::array<uint8_t, 32> sha256(const uint8_t* data, size_t len);
std::array<uint8_t, 32> sha256(const std::vector<uint8_t>& data);

// --- asymmetric layer (RSA-2048-OAEP) used only to seal key portfolios ---

struct UserKeyPair {
    std::string public_pem;
    std::string private_pem;
};

UserKeyPair generate_user_keypair();

void write_pem(const std::filesystem::path& path, const std::string& pem);
std::string read_pem(const std::filesystem::path& path);

/// A user's sealed set of per-individual keys plus the system key.
struct KeyPortfolio {
    std::string user_id;
    SymmetricKey system_key;
    std::map<std::string, SymmetricKey> individual_keys;

    bool has(const std::string& individual_id) const {
        return individual_keys.count(individual_id) != 0;
    }
    const SymmetricKey& key_of(const std::string& individual_id) const;
};

/// Hybrid sealing: a fresh wrapping key encrypts the portfolio body with
/// Salsa20 (nonce 0); the wrapping key travels under RSA-OAEP. The body
/// carries a SHA-256 checksum, so opening with the wrong private key fails
/// loudly instead of yielding garbage.
std::vector<uint8_t> seal_portfolio(const KeyPortfolio& portfolio,
                                    const std::string& user_public_pem);
KeyPortfolio open_portfolio(const std::vector<uint8_t>& blob,
                            const std::string& user_private_pem);

void save_portfolio(const std::filesystem::path& path, const KeyPortfolio& portfolio,
                    const std::string& user_public_pem);
KeyPortfolio load_portfolio(const std::filesystem::path& path,
                            const std::string& user_private_pem);

}  // namespace erindex
