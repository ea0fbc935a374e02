#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "amq/matrix.hpp"
#include "amq/quantizer.hpp"

namespace amq {

// Little binary container plumbing for checkpoints: length-prefixed strings,
// raw little-endian PODs, shape-prefixed matrices.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
    }
    template <typename T>
    void pod(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        pod<uint64_t>(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    template <typename T>
    void matrix(const Matrix<T>& m) {
        pod<int32_t>(m.rows());
        pod<int32_t>(m.cols());
        out_.write(reinterpret_cast<const char*>(m.data()),
                   static_cast<std::streamsize>(m.size() * sizeof(T)));
    }
    void quantizer(const Quantizer& q) {
        pod<int32_t>(q.bits());
        pod<uint8_t>(static_cast<uint8_t>(q.axis()));
        pod<uint64_t>(q.scales().size());
        for (double s : q.scales()) pod<double>(s);
        pod<double>(q.ema_stat());
        pod<double>(q.ema_decay());
        pod<uint8_t>(q.frozen() ? 1 : 0);
    }
    void done() {
        out_.flush();
        if (!out_) throw std::runtime_error("checkpoint: write failed");
    }

private:
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("checkpoint: cannot open " + path);
    }
    template <typename T>
    T pod() {
        T v;
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        check();
        return v;
    }
    std::string str() {
        const uint64_t n = pod<uint64_t>();
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        check();
        return s;
    }
    template <typename T>
    Matrix<T> matrix() {
        const int32_t r = pod<int32_t>();
        const int32_t c = pod<int32_t>();
        if (r < 0 || c < 0) throw std::runtime_error("checkpoint: bad matrix shape");
        Matrix<T> m(r, c);
        in_.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(m.size() * sizeof(T)));
        check();
        return m;
    }
    Quantizer quantizer() {
        const int32_t bits = pod<int32_t>();
        const uint8_t axis = pod<uint8_t>();
        const uint64_t n = pod<uint64_t>();
        std::vector<double> scales(n);
        for (auto& s : scales) s = pod<double>();
        const double stat = pod<double>();
        const double decay = pod<double>();
        const bool frozen = pod<uint8_t>() != 0;
        Quantizer q = Quantizer::with_ema(bits, decay);
        q.restore(std::move(scales), static_cast<ScaleAxis>(axis), stat, decay, frozen);
        return q;
    }

private:
    std::ifstream in_;
    void check() {
        if (!in_) throw std::runtime_error("checkpoint: truncated or unreadable file");
    }
};

}  // namespace amq
