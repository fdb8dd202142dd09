#ifndef CAPARENA_BINIO_HPP
#define CAPARENA_BINIO_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "caparena/errors.hpp"

namespace caparena {

// Little-endian binary writer/reader for the versioned container files
// (datasets, checkpoints, attack outcome sets). Reads validate length up
// front so truncated files fail with FormatError instead of producing
// garbage values.

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void magic(const char m[4]) { raw(m, 4); }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void f64_block(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("short write: " + path_);
    }

private:
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw IoError("write failed: " + path_);
    }

    std::string path_;
    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open for reading: " + path);
    }

    void expect_magic(const char m[4], const std::string& what) {
        char got[4];
        raw(got, 4);
        if (got[0] != m[0] || got[1] != m[1] || got[2] != m[2] || got[3] != m[3])
            throw FormatError("not a " + what + " file: bad magic in " + path_);
    }

    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }

    std::string str(std::uint64_t max_len = (1ULL << 30)) {
        const std::uint64_t n = u64();
        if (n > max_len) throw FormatError("string length out of range in " + path_);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    std::vector<double> f64_block(std::uint64_t max_len = (1ULL << 30)) {
        const std::uint64_t n = u64();
        if (n > max_len) throw FormatError("block length out of range in " + path_);
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }

    void expect_eof() {
        char c;
        in_.read(&c, 1);
        if (!in_.eof()) throw FormatError("trailing bytes in " + path_);
    }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError("truncated file: " + path_);
    }

    std::string path_;
    std::ifstream in_;
};

}  // namespace caparena

#endif
