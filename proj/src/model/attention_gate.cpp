#include "upet/model/attention_gate.hpp"

#include "upet/core/errors.hpp"
#include "upet/core/ops.hpp"

namespace upet {

template <typename T>
AttentionGateParams<T> AttentionGateParams<T>::zeros(Index c_x, Index c_g) {
  const Index f = gate_inner_channels(c_x);
  return {Tensor<T>(Shape{f, c_x, 1, 1, 1}), Tensor<T>(Shape{f, c_g, 1, 1, 1}), Tensor<T>(Shape{f}),
          Tensor<T>(Shape{1, f, 1, 1, 1}), Tensor<T>(Shape{1})};
}

template <typename T>
void AttentionGateParams<T>::validate(Index c_x, Index c_g) const {
  if (!w_x.defined() || !w_g.defined() || !b_g.defined() || !psi.defined() || !b_psi.defined()) {
    throw ShapeError("attention gate: all of W_x, W_g, b_g, psi, b_psi are required");
  }
  const Index f = w_x.dim(0);
  if (f < 1) throw ShapeError("attention gate: F_int must be >= 1");
  auto expect = [](const Tensor<T>& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw ShapeError(std::string("attention gate: ") + name + " has shape " + t.shape().str() + ", expected " +
                       s.str());
    }
  };
  expect(w_x, Shape{f, c_x, 1, 1, 1}, "W_x");
  expect(w_g, Shape{f, c_g, 1, 1, 1}, "W_g");
  expect(b_g, Shape{f}, "b_g");
  expect(psi, Shape{1, f, 1, 1, 1}, "psi");
  expect(b_psi, Shape{1}, "b_psi");
}

template <typename T>
GateOutput<T> attention_gate(const Tensor<T>& x, const Tensor<T>& g, const AttentionGateParams<T>& p) {
  if (!x.defined() || !g.defined() || x.rank() != 5 || g.rank() != 5) {
    throw ShapeError("attention gate: x and g must be N x C x D x H x W");
  }
  if (x.dim(0) != g.dim(0)) throw ShapeError("attention gate: batch axis N differs between x and g");
  static const char* axes[] = {"D", "H", "W"};
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.dim(a) != 2 * g.dim(a)) {
      throw ShapeError(std::string("attention gate: spatial axis ") + axes[a - 2] + " of g must be half of x (x=" +
                       std::to_string(x.dim(a)) + ", g=" + std::to_string(g.dim(a)) + ")");
    }
  }
  p.validate(x.dim(1), g.dim(1));

  const Tensor<T> none;
  const Tensor<T> theta = conv3d(x, p.w_x, none, 2, 0);
  const Tensor<T> phi = conv3d(g, p.w_g, p.b_g);
  const Tensor<T> q = conv3d(relu(add(theta, phi)), p.psi, p.b_psi);
  const Tensor<T> alpha = upsample_trilinear(sigmoid(q), 2);
  return {mul(x, alpha), alpha};
}

template struct AttentionGateParams<float>;
template struct AttentionGateParams<double>;
template GateOutput<float> attention_gate(const Tensor<float>&, const Tensor<float>&, const AttentionGateParams<float>&);
template GateOutput<double> attention_gate(const Tensor<double>&, const Tensor<double>&,
                                           const AttentionGateParams<double>&);

}  // namespace upet
