#include "erindex/crypto.hpp"

#include <sodium.h>

#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rsa.h>

#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>

#include "erindex/byte_io.hpp"
#include "erindex/errors.hpp"

namespace erindex {

namespace {

void ensure_sodium() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) throw CryptoError("libsodium initialization failed");
    });
}

[[noreturn]] void throw_openssl(const std::string& what) {
    char buf[256] = {0};
    ERR_error_string_n(ERR_get_error(), buf, sizeof(buf));
    throw CryptoError(what + ": " + buf);
}

using EvpPkeyPtr = std::unique_ptr<EVP_PKEY, decltype(&EVP_PKEY_free)>;
using EvpCtxPtr = std::unique_ptr<EVP_PKEY_CTX, decltype(&EVP_PKEY_CTX_free)>;

EvpPkeyPtr pem_to_public(const std::string& pem) {
    std::unique_ptr<BIO, decltype(&BIO_free)> bio(
        BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())), BIO_free);
    EVP_PKEY* key = PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr);
    if (!key) throw_openssl("cannot parse public key PEM");
    return EvpPkeyPtr(key, EVP_PKEY_free);
}

EvpPkeyPtr pem_to_private(const std::string& pem) {
    std::unique_ptr<BIO, decltype(&BIO_free)> bio(
        BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())), BIO_free);
    EVP_PKEY* key = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
    if (!key) throw_openssl("cannot parse private key PEM");
    return EvpPkeyPtr(key, EVP_PKEY_free);
}

constexpr char kPortfolioMagic[4] = {'E', 'R', 'P', 'F'};
constexpr uint16_t kPortfolioVersion = 1;

}  // namespace

uint64_t SymmetricKey::fingerprint() const {
    auto digest = sha256(bytes.data(), bytes.size());
    uint64_t fp;
    std::memcpy(&fp, digest.data(), sizeof(fp));
    return fp;
}

SymmetricKey generate_key() {
    ensure_sodium();
    SymmetricKey key;
    randombytes_buf(key.bytes.data(), key.bytes.size());
    return key;
}

std::vector<uint8_t> salsa20_keystream(const SymmetricKey& key, uint64_t nonce,
                                       uint64_t length, uint64_t offset) {
    ensure_sodium();
    uint8_t n8[8];
    for (int i = 0; i < 8; ++i) n8[i] = static_cast<uint8_t>(nonce >> (8 * i));
    const uint64_t lead = offset % 64;
    std::vector<uint8_t> buf(lead + length, 0);
    if (!buf.empty() &&
        crypto_stream_salsa20_xor_ic(buf.data(), buf.data(), buf.size(), n8, offset / 64,
                                     key.bytes.data()) != 0)
        throw CryptoError("salsa20 keystream generation failed");
    buf.erase(buf.begin(), buf.begin() + static_cast<ptrdiff_t>(lead));
    return buf;
}

void NonceLedger::record(const SymmetricKey& key, uint64_t nonce) {
    if (!used_.emplace(key.fingerprint(), nonce).second)
        throw CryptoError("nonce reuse detected: (key, " + std::to_string(nonce) +
                          ") already consumed in this save");
}

EncryptionContext::EncryptionContext(const SymmetricKey& key, uint64_t nonce,
                                     NonceLedger* ledger)
    : key_(key), nonce_(nonce) {
    if (ledger) ledger->record(key, nonce);
}

void EncryptionContext::apply(uint8_t* data, size_t len) {
    if (len == 0) return;
    auto ks = salsa20_keystream(key_, nonce_, len, offset_);
    for (size_t i = 0; i < len; ++i) data[i] ^= ks[i];
    offset_ += len;
}

std::vector<uint8_t> EncryptionContext::apply_copy(const uint8_t* data, size_t len) {
    std::vector<uint8_t> out(data, data + len);
    apply(out.data(), out.size());
    return out;
}

std::array<uint8_t, 32> sha256(const uint8_t* data, size_t len) {
    ensure_sodium();
    std::array<uint8_t, 32> digest;
    crypto_hash_sha256(digest.data(), data, len);
    return digest;
}

std::array<uint8_t, 32> sha256(const std::vector<uint8_t>& data) {
    return sha256(data.data(), data.size());
}

UserKeyPair generate_user_keypair() {
    EvpCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_RSA, nullptr), EVP_PKEY_CTX_free);
    if (!ctx || EVP_PKEY_keygen_init(ctx.get()) <= 0 ||
        EVP_PKEY_CTX_set_rsa_keygen_bits(ctx.get(), 2048) <= 0)
        throw_openssl("RSA keygen setup failed");
    EVP_PKEY* raw = nullptr;
    if (EVP_PKEY_keygen(ctx.get(), &raw) <= 0) throw_openssl("RSA keygen failed");
    EvpPkeyPtr key(raw, EVP_PKEY_free);

    auto to_pem = [&](bool is_private) {
        std::unique_ptr<BIO, decltype(&BIO_free)> bio(BIO_new(BIO_s_mem()), BIO_free);
        int ok = is_private
                     ? PEM_write_bio_PrivateKey(bio.get(), key.get(), nullptr, nullptr, 0,
                                                nullptr, nullptr)
                     : PEM_write_bio_PUBKEY(bio.get(), key.get());
        if (!ok) throw_openssl("PEM encoding failed");
        char* data = nullptr;
        long len = BIO_get_mem_data(bio.get(), &data);
        return std::string(data, static_cast<size_t>(len));
    };

    return UserKeyPair{to_pem(false), to_pem(true)};
}

void write_pem(const std::filesystem::path& path, const std::string& pem) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write key file: " + path.string());
    out << pem;
}

std::string read_pem(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read key file: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const SymmetricKey& KeyPortfolio::key_of(const std::string& individual_id) const {
    auto it = individual_keys.find(individual_id);
    if (it == individual_keys.end())
        throw CryptoError("portfolio holds no key for individual '" + individual_id + "'");
    return it->second;
}

namespace {

std::vector<uint8_t> rsa_oaep(EVP_PKEY* key, const uint8_t* in, size_t in_len, bool encrypt) {
    EvpCtxPtr ctx(EVP_PKEY_CTX_new(key, nullptr), EVP_PKEY_CTX_free);
    auto init = encrypt ? EVP_PKEY_encrypt_init : EVP_PKEY_decrypt_init;
    auto run = encrypt ? EVP_PKEY_encrypt : EVP_PKEY_decrypt;
    if (!ctx || init(ctx.get()) <= 0 ||
        EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) <= 0)
        throw_openssl("RSA-OAEP setup failed");
    size_t out_len = 0;
    if (run(ctx.get(), nullptr, &out_len, in, in_len) <= 0) throw_openssl("RSA-OAEP sizing failed");
    std::vector<uint8_t> out(out_len);
    if (run(ctx.get(), out.data(), &out_len, in, in_len) <= 0)
        throw CryptoError("RSA-OAEP operation failed (wrong key?)");
    out.resize(out_len);
    return out;
}

std::vector<uint8_t> portfolio_body(const KeyPortfolio& p) {
    ByteWriter body;
    body.str(p.user_id);
    body.bytes(p.system_key.bytes.data(), p.system_key.bytes.size());
    body.u32(static_cast<uint32_t>(p.individual_keys.size()));
    for (const auto& [id, key] : p.individual_keys) {
        body.str(id);
        body.bytes(key.bytes.data(), key.bytes.size());
    }
    auto digest = sha256(body.data());
    body.bytes(digest.data(), digest.size());
    return body.take();
}

}  // namespace

std::vector<uint8_t> seal_portfolio(const KeyPortfolio& portfolio,
                                    const std::string& user_public_pem) {
    auto pub = pem_to_public(user_public_pem);
    SymmetricKey wrap = generate_key();
    auto wrapped = rsa_oaep(pub.get(), wrap.bytes.data(), wrap.bytes.size(), true);

    auto body = portfolio_body(portfolio);
    EncryptionContext ec(wrap, 0);
    ec.apply(body.data(), body.size());

    ByteWriter out;
    out.bytes(kPortfolioMagic, 4);
    out.u16(kPortfolioVersion);
    out.u32(static_cast<uint32_t>(wrapped.size()));
    out.bytes(wrapped);
    out.u32(static_cast<uint32_t>(body.size()));
    out.bytes(body);
    return out.take();
}

KeyPortfolio open_portfolio(const std::vector<uint8_t>& blob,
                            const std::string& user_private_pem) {
    ByteReader in(blob);
    char magic[4];
    in.bytes(magic, 4);
    if (std::memcmp(magic, kPortfolioMagic, 4) != 0)
        throw FormatError("not a key portfolio blob");
    if (in.u16() != kPortfolioVersion) throw FormatError("unsupported portfolio version");

    auto priv = pem_to_private(user_private_pem);
    auto wrapped = in.bytes(in.u32());
    SymmetricKey wrap;
    {
        auto raw = rsa_oaep(priv.get(), wrapped.data(), wrapped.size(), false);
        if (raw.size() != wrap.bytes.size())
            throw CryptoError("portfolio wrapping key has unexpected size");
        std::memcpy(wrap.bytes.data(), raw.data(), raw.size());
    }

    auto body = in.bytes(in.u32());
    EncryptionContext ec(wrap, 0);
    ec.apply(body.data(), body.size());

    if (body.size() < 32) throw CorruptionError("portfolio body truncated");
    auto digest = sha256(body.data(), body.size() - 32);
    if (std::memcmp(digest.data(), body.data() + body.size() - 32, 32) != 0)
        throw CryptoError("portfolio checksum mismatch (wrong private key or corrupt blob)");

    ByteReader br(body.data(), body.size() - 32);
    KeyPortfolio p;
    p.user_id = br.str();
    br.bytes(p.system_key.bytes.data(), p.system_key.bytes.size());
    uint32_t count = br.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string id = br.str();
        SymmetricKey k;
        br.bytes(k.bytes.data(), k.bytes.size());
        p.individual_keys.emplace(std::move(id), k);
    }
    return p;
}

void save_portfolio(const std::filesystem::path& path, const KeyPortfolio& portfolio,
                    const std::string& user_public_pem) {
    auto blob = seal_portfolio(portfolio, user_public_pem);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write portfolio: " + path.string());
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
}

KeyPortfolio load_portfolio(const std::filesystem::path& path,
                            const std::string& user_private_pem) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read portfolio: " + path.string());
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    return open_portfolio(blob, user_private_pem);
}

}  // namespace erindex
