#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace mastercover {

/// Little binary framing for checkpoints: fixed-width native-endian scalars,
/// length-prefixed blobs. Readers validate lengths and throw on truncation,
/// so a corrupt checkpoint is refused instead of misread.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void f32(float v);
  void str(const std::string& s);
  void vec(const Eigen::VectorXd& v);
  void vecf(const Eigen::VectorXf& v);
  void mat(const Eigen::MatrixXd& m);
  void matf(const Eigen::MatrixXf& m);

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  float f32();
  std::string str();
  Eigen::VectorXd vec();
  Eigen::VectorXf vecf();
  Eigen::MatrixXd mat();
  Eigen::MatrixXf matf();

 private:
  void read_raw(void* dst, std::size_t n);
  std::istream& is_;
};

}  // namespace mastercover
