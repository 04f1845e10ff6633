#include "plab/weights_io.hpp"

#include <filesystem>
#include <fstream>

namespace plab {

ByteReader::ByteReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'", 0);
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    buf_.resize(static_cast<std::size_t>(size));
    if (size > 0 && !in.read(reinterpret_cast<char*>(buf_.data()), size)) {
        throw FormatError("cannot read '" + path + "'", 0);
    }
}

void ByteReader::read_bytes(void* dst, std::size_t n, const char* what) {
    if (off_ + n > buf_.size()) {
        throw FormatError(std::string("truncated input while reading ") + what, off_);
    }
    std::memcpy(dst, buf_.data() + off_, n);
    off_ += n;
}

std::uint8_t ByteReader::u8(const char* what) {
    std::uint8_t v;
    read_bytes(&v, 1, what);
    return v;
}

std::uint16_t ByteReader::u16(const char* what) {
    unsigned char b[2];
    read_bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ByteReader::u32(const char* what) {
    unsigned char b[4];
    read_bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t ByteReader::u64(const char* what) {
    unsigned char b[8];
    read_bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::int64_t ByteReader::i64(const char* what) {
    return static_cast<std::int64_t>(u64(what));
}

float ByteReader::f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

double ByteReader::f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

std::string ByteReader::str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    read_bytes(s.data(), n, what);
    return s;
}

void ByteReader::expect_magic(const char* magic4, const char* format_name) {
    const std::uint64_t at = off_;
    char got[4];
    read_bytes(got, 4, "magic");
    if (std::memcmp(got, magic4, 4) != 0) {
        throw FormatError(std::string("bad magic, not a ") + format_name + " file", at);
    }
}

void ByteWriter::bytes(const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    buf_.insert(buf_.end(), p, p + n);
}

void ByteWriter::u8(std::uint8_t v) { bytes(&v, 1); }

void ByteWriter::u16(std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                                static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
}

void ByteWriter::u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    bytes(b, 4);
}

void ByteWriter::u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    bytes(b, 8);
}

void ByteWriter::i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

void ByteWriter::f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u32(bits);
}

void ByteWriter::f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
}

void ByteWriter::commit(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp + "'");
        if (!buf_.empty()) {
            out.write(reinterpret_cast<const char*>(buf_.data()),
                      static_cast<std::streamsize>(buf_.size()));
        }
        if (!out) throw Error("write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    ByteWriter w;
    w.str(contents);
    w.commit(path);
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for hashing");
    std::uint64_t h = 0xCBF29CE484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

// ---------------------------------------------------------------------------
// PTW1: portable backbone weights. f32 payload, names per named_tensors().
// ---------------------------------------------------------------------------

void write_ptw1(const std::string& path, const BackboneState& state) {
    ByteWriter w;
    w.str("PTW1");
    const auto named = state.named_tensors();
    w.u32(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str(name);
        w.u8(static_cast<std::uint8_t>(t->shape.size()));
        for (const std::int64_t dim : t->shape) {
            w.u32(static_cast<std::uint32_t>(dim));
        }
        for (const double x : t->data) w.f32(static_cast<float>(x));
    }
    w.commit(path);
}

BackboneState read_ptw1(const std::string& path, const ViTConfig& config) {
    config.validate();
    ByteReader r(path);
    r.expect_magic("PTW1", "PTW1");
    const std::uint32_t count = r.u32("tensor count");

    BackboneState state;
    state.config = config;
    state.blocks.resize(config.depth);
    auto named = state.named_tensors();
    if (count != named.size()) {
        throw FormatError("PTW1 holds " + std::to_string(count) + " tensors, config needs " +
                              std::to_string(named.size()),
                          r.offset());
    }
    std::vector<bool> filled(named.size(), false);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16("name length");
        const std::string name = r.str(name_len, "tensor name");
        const std::uint8_t rank = r.u8("rank");
        std::vector<std::int64_t> dims;
        std::int64_t numel = 1;
        for (int k = 0; k < rank; ++k) {
            const std::uint32_t d = r.u32("dimension");
            dims.push_back(static_cast<std::int64_t>(d));
            numel *= d;
        }
        std::size_t slot = named.size();
        for (std::size_t k = 0; k < named.size(); ++k) {
            if (named[k].first == name) {
                slot = k;
                break;
            }
        }
        if (slot == named.size()) {
            throw FormatError("unknown tensor name '" + name + "'", r.offset());
        }
        if (filled[slot]) {
            throw FormatError("duplicate tensor name '" + name + "'", r.offset());
        }
        Tensor* dst = named[slot].second;
        Tensor loaded = Tensor::zeros(dims);
        for (std::int64_t k = 0; k < numel; ++k) {
            loaded.data[static_cast<std::size_t>(k)] =
                static_cast<double>(r.f32("tensor data"));
        }
        // Shapes come from the config; the file must agree.
        Tensor expected = expected_shape_of(name, config);
        if (loaded.shape != expected.shape) {
            throw FormatError("tensor '" + name + "' has shape " + loaded.shape_str() +
                                  ", expected " + expected.shape_str(),
                              r.offset());
        }
        *dst = std::move(loaded);
        filled[slot] = true;
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after last tensor", r.offset());
    }
    for (auto& [name, t] : state.named_tensors()) {
        t->check_finite(("PTW1 tensor " + name).c_str());
    }
    state.set_frozen(true);
    return state;
}

Tensor expected_shape_of(const std::string& name, const ViTConfig& config) {
    const std::int64_t d = config.embed_dim;
    const std::int64_t h = config.mlp_hidden();
    if (name == "patch_proj") return Tensor::zeros({config.patch_dim(), d});
    if (name == "pos_embed") return Tensor::zeros({1 + config.num_patches(), d});
    if (name == "cls_token") return Tensor::zeros({1, d});
    if (name == "ln_f.gamma" || name == "ln_f.beta") return Tensor::zeros({d});
    if (name.rfind("blocks.", 0) == 0) {
        const std::string rest = name.substr(name.find('.', 7) + 1);
        if (rest == "attn.w_q" || rest == "attn.w_k" || rest == "attn.w_v" ||
            rest == "attn.w_o") {
            return Tensor::zeros({d, d});
        }
        if (rest == "ln1.gamma" || rest == "ln1.beta" || rest == "ln2.gamma" ||
            rest == "ln2.beta" || rest == "mlp.b2") {
            return Tensor::zeros({d});
        }
        if (rest == "mlp.w1") return Tensor::zeros({d, h});
        if (rest == "mlp.b1") return Tensor::zeros({h});
        if (rest == "mlp.w2") return Tensor::zeros({h, d});
    }
    throw Error("no expected shape for tensor '" + name + "'");
}

}  // namespace plab
