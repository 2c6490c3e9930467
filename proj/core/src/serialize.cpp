#include "mastercover/serialize.hpp"

#include <stdexcept>

namespace mastercover {

namespace {
constexpr std::uint64_t kMaxBlob = 1ULL << 33;  // 8 GiB sanity cap
}

void BinaryWriter::u32(std::uint32_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::i64(std::int64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::f64(double v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
void BinaryWriter::f32(float v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  os_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::vec(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  os_.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * v.size()));
}

void BinaryWriter::vecf(const Eigen::VectorXf& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  os_.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(float) * v.size()));
}

void BinaryWriter::mat(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  os_.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void BinaryWriter::matf(const Eigen::MatrixXf& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  os_.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
}

void BinaryReader::read_raw(void* dst, std::size_t n) {
  is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n)
    throw std::runtime_error("checkpoint truncated");
}

std::uint32_t BinaryReader::u32() { std::uint32_t v; read_raw(&v, sizeof v); return v; }
std::uint64_t BinaryReader::u64() { std::uint64_t v; read_raw(&v, sizeof v); return v; }
std::int64_t BinaryReader::i64() { std::int64_t v; read_raw(&v, sizeof v); return v; }
double BinaryReader::f64() { double v; read_raw(&v, sizeof v); return v; }
float BinaryReader::f32() { float v; read_raw(&v, sizeof v); return v; }

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > kMaxBlob) throw std::runtime_error("checkpoint corrupt: oversized string");
  std::string s(n, '\0');
  read_raw(s.data(), n);
  return s;
}

Eigen::VectorXd BinaryReader::vec() {
  const std::uint64_t n = u64();
  if (n > kMaxBlob / sizeof(double)) throw std::runtime_error("checkpoint corrupt: oversized vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  read_raw(v.data(), sizeof(double) * n);
  return v;
}

Eigen::VectorXf BinaryReader::vecf() {
  const std::uint64_t n = u64();
  if (n > kMaxBlob / sizeof(float)) throw std::runtime_error("checkpoint corrupt: oversized vector");
  Eigen::VectorXf v(static_cast<Eigen::Index>(n));
  read_raw(v.data(), sizeof(float) * n);
  return v;
}

Eigen::MatrixXd BinaryReader::mat() {
  const std::uint64_t r = u64();
  const std::uint64_t c = u64();
  if (r * c > kMaxBlob / sizeof(double)) throw std::runtime_error("checkpoint corrupt: oversized matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  read_raw(m.data(), sizeof(double) * r * c);
  return m;
}

Eigen::MatrixXf BinaryReader::matf() {
  const std::uint64_t r = u64();
  const std::uint64_t c = u64();
  if (r * c > kMaxBlob / sizeof(float)) throw std::runtime_error("checkpoint corrupt: oversized matrix");
  Eigen::MatrixXf m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  read_raw(m.data(), sizeof(float) * r * c);
  return m;
}

}  // namespace mastercover
