#include "lightdp/checkpoint.hpp"

#include <cstdio>
#include <cstring>

namespace lightdp {

namespace {

struct Writer {
    FILE * f;
    void u8(std::uint8_t v) { std::fwrite(&v, 1, 1, f); }
    void u16(std::uint16_t v) {
        u8(std::uint8_t(v & 0xff));
        u8(std::uint8_t(v >> 8));
    }
    void u32(std::uint32_t v) {
        u16(std::uint16_t(v & 0xffff));
        u16(std::uint16_t(v >> 16));
    }
    void u64v(std::uint64_t v) {
        u32(std::uint32_t(v & 0xffffffffu));
        u32(std::uint32_t(v >> 32));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64v(bits);
    }
    void bytes(const void * p, size_t n) { std::fwrite(p, 1, n, f); }
};

struct Reader {
    FILE * f;
    std::string where;
    void fail() const { throw contract_error("checkpoint: truncated file " + where); }
    std::uint8_t u8() {
        std::uint8_t v;
        if (std::fread(&v, 1, 1, f) != 1) fail();
        return v;
    }
    std::uint16_t u16() {
        const auto a = u8(), b = u8();
        return std::uint16_t(a | (b << 8));
    }
    std::uint32_t u32() {
        const auto a = u16(), b = u16();
        return std::uint32_t(a) | (std::uint32_t(b) << 16);
    }
    std::uint64_t u64v() {
        const auto a = u32(), b = u32();
        return std::uint64_t(a) | (std::uint64_t(b) << 32);
    }
    float f32() {
        const auto bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const auto bits = u64v();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void bytes(void * p, size_t n) {
        if (std::fread(p, 1, n, f) != n) fail();
    }
};

}  // namespace

void save_checkpoint(const std::string & path, const Checkpoint & ck) {
    FILE * f = std::fopen(path.c_str(), "wb");
    if (!f) throw contract_error("checkpoint: cannot open " + path + " for writing");
    Writer w{f};
    w.bytes("LDPC", 4);
    w.u32(1);
    w.u8(ck.mode == EdmMode::consistency ? 1 : 0);
    const auto & c = ck.net.cfg;
    for (int v : {c.depth, c.hidden, c.heads, c.action_dim, c.horizon, c.obs_seq_len, c.obs_dim,
                  c.ffn_mult})
        w.u32(std::uint32_t(v));
    w.u32(std::uint32_t(ck.net.params().size()));
    for (const auto & p : ck.net.params()) {
        w.u16(std::uint16_t(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.u8(std::uint8_t(p.value.ndim()));
        for (int d : p.value.shape()) w.u32(std::uint32_t(d));
        for (float v : p.value.data()) w.f32(v);
    }
    w.u8(ck.gate_logits ? 1 : 0);
    if (ck.gate_logits) {
        w.u32(std::uint32_t(ck.gate_logits->size()));
        for (const auto & g : *ck.gate_logits) {
            w.u32(std::uint32_t(g.size()));
            for (double v : g) w.f64(v);
        }
    }
    w.u8(ck.masks ? 1 : 0);
    if (ck.masks) {
        w.u32(std::uint32_t(ck.masks->size()));
        for (int m : *ck.masks) w.u8(std::uint8_t(m));
    }
    std::fclose(f);
}

Checkpoint load_checkpoint(const std::string & path) {
    FILE * f = std::fopen(path.c_str(), "rb");
    if (!f) throw contract_error("checkpoint: cannot open " + path);
    Reader r{f, path};
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "LDPC", 4) != 0) {
        std::fclose(f);
        throw contract_error("checkpoint: bad magic in " + path);
    }
    const auto version = r.u32();
    if (version != 1) {
        std::fclose(f);
        throw contract_error("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.mode = r.u8() ? EdmMode::consistency : EdmMode::diffusion;
    DenoiserConfig cfg;
    cfg.depth = int(r.u32());
    cfg.hidden = int(r.u32());
    cfg.heads = int(r.u32());
    cfg.action_dim = int(r.u32());
    cfg.horizon = int(r.u32());
    cfg.obs_seq_len = int(r.u32());
    cfg.obs_dim = int(r.u32());
    cfg.ffn_mult = int(r.u32());
    ck.net = DenoiserNet<float>(cfg);

    const auto n_params = r.u32();
    if (n_params != ck.net.params().size()) {
        std::fclose(f);
        throw contract_error("checkpoint: parameter count mismatch in " + path);
    }
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const auto name_len = r.u16();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        const int pi = ck.net.find(name);
        auto & value = ck.net.params()[size_t(pi)].value;
        const auto ndims = r.u8();
        Shape shape(ndims);
        for (auto & d : shape) d = int(r.u32());
        if (shape != value.shape()) {
            std::fclose(f);
            throw contract_error("checkpoint: shape mismatch for " + name + " in " + path);
        }
        for (auto & v : value.data()) v = r.f32();
    }
    if (r.u8()) {
        std::vector<std::vector<double>> gates(r.u32());
        for (auto & g : gates) {
            g.resize(r.u32());
            for (auto & v : g) v = r.f64();
        }
        ck.gate_logits = std::move(gates);
    }
    if (r.u8()) {
        std::vector<int> masks(r.u32());
        for (auto & m : masks) m = int(r.u8());
        ck.masks = std::move(masks);
    }
    std::fclose(f);
    return ck;
}

}  // namespace lightdp
