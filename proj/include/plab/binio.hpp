#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "plab/error.hpp"

namespace plab {

// Little-endian binary reader over a fully-buffered file. Every read is
// bounds-checked; failures throw FormatError carrying the byte offset.
class ByteReader {
public:
    explicit ByteReader(const std::string& path);
    explicit ByteReader(std::vector<unsigned char> bytes) : buf_(std::move(bytes)) {}

    std::uint64_t offset() const { return off_; }
    std::uint64_t remaining() const { return buf_.size() - off_; }
    bool at_end() const { return off_ == buf_.size(); }

    void read_bytes(void* dst, std::size_t n, const char* what);
    std::uint8_t u8(const char* what);
    std::uint16_t u16(const char* what);
    std::uint32_t u32(const char* what);
    std::uint64_t u64(const char* what);
    std::int64_t i64(const char* what);
    float f32(const char* what);
    double f64(const char* what);
    std::string str(std::size_t n, const char* what);

    void expect_magic(const char* magic4, const char* format_name);

private:
    std::vector<unsigned char> buf_;
    std::size_t off_ = 0;
};

// Little-endian binary writer; commit() writes to a temp file next to the
// target and renames it into place, so outputs are all-or-nothing.
class ByteWriter {
public:
    void bytes(const void* src, std::size_t n);
    void u8(std::uint8_t v);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v);
    void f32(float v);
    void f64(double v);
    void str(const std::string& s) { bytes(s.data(), s.size()); }

    const std::vector<unsigned char>& buffer() const { return buf_; }
    void commit(const std::string& path) const;

private:
    std::vector<unsigned char> buf_;
};

// Atomic text-file write (temp + rename), shared by the CSV/JSON emitters.
void write_file_atomic(const std::string& path, const std::string& contents);

// FNV-1a 64-bit content hash, used to fingerprint run inputs.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64_file(const std::string& path);

}  // namespace plab
