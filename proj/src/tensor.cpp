#include "hyperace/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace hyperace {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("numel", "negative extent in " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  auto n = hyperace::numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
  if (hyperace::numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("Tensor", "shape " + to_string(shape) + " holds " +
                                   std::to_string(hyperace::numel(shape)) + " elements, got " +
                                   std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor make_tensor(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item", "expected one element, shape is " + to_string(impl_->shape));
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

namespace {
thread_local Tape* g_tape = nullptr;
std::atomic<std::uint64_t> g_tape_serial{0};
thread_local FlopCounter* g_counter = nullptr;
}  // namespace

Tape* active_tape() { return g_tape; }

Tape::Tape() : serial_(++g_tape_serial) {}

void Tape::record(const std::shared_ptr<TensorImpl>& output, std::function<void()> backward) {
  nodes_.push_back(Node{output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: output must be a scalar, got shape " +
                                (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output == loss.impl(); });
  if (it == nodes_.rend()) {
    throw std::invalid_argument("backward: output was not produced on this tape");
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (; it != nodes_.rend(); ++it) {
    if (!it->output->grad.empty()) it->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = previous_; }

FlopCounter::FlopCounter() : parent_(g_counter) { g_counter = this; }
FlopCounter::~FlopCounter() {
  g_counter = parent_;
  if (parent_) parent_->flops_ += flops_;
}

void add_flops(std::uint64_t n) {
  if (g_counter) g_counter->flops_ += n;
}

}  // namespace hyperace
