#include "gqtok/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gqtok {

namespace {
thread_local AllocationProbe* g_active_probe = nullptr;

void note_allocation(std::size_t n) {
  if (g_active_probe != nullptr) g_active_probe->record(n);
}

constexpr std::size_t kCompensatedThreshold = std::size_t{1} << 16;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

ShapeError ShapeError::mismatch(const std::string& op, const Shape& a, const Shape& b) {
  return ShapeError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  note_allocation(data_.size());
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " elements");
  }
  note_allocation(data_.size());
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item: tensor of shape " + shape_string(shape_) + " is not a scalar");
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError::mismatch("reshape", shape_, shape);
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

AllocationProbe::AllocationProbe() : previous_(g_active_probe) { g_active_probe = this; }

AllocationProbe::~AllocationProbe() { g_active_probe = previous_; }

void AllocationProbe::record(std::size_t elements) noexcept {
  ++count_;
  total_ += elements;
  if (elements > peak_) peak_ = elements;
}

double reduce_sum(std::span<const double> values) {
  if (values.size() <= kCompensatedThreshold) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  double s = 0.0;
  double c = 0.0;
  for (double v : values) {
    const double y = v - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s;
}

}  // namespace gqtok
