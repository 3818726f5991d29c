#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "upet/core/errors.hpp"
#include "upet/core/tensor.hpp"

namespace upet {

template <typename T>
class Tape;

namespace detail {
template <typename T>
inline thread_local Tape<T>* active_tape = nullptr;
}  // namespace detail

/// One executed operation in a computation record.
///
/// `forward` recomputes `output` from `inputs` in place; `backward` reads the
/// output gradient and accumulates into every input that requires a gradient.
/// An empty `backward` marks the operation as non-differentiable.
template <typename T>
struct TapeEntry {
  std::string op;
  std::vector<Tensor<T>> inputs;
  Tensor<T> output;
  std::function<void()> forward;
  std::function<void()> backward;

  bool differentiable() const { return static_cast<bool>(backward); }
};

/// Reverse-mode computation record (Wengert list).
///
/// Operations append to the tape that is active on the calling thread; with
/// no active tape nothing is recorded and outputs never require gradients.
/// Each thread must own its tape. A tape can run `backward` once; a second
/// call is rejected until `reset()`.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    if (detail::active_tape<T> == this) detail::active_tape<T> = nullptr;
  }

  /// RAII activation; restores the previously active tape on destruction.
  class Scope {
   public:
    explicit Scope(Tape* tape) : previous_(detail::active_tape<T>) { detail::active_tape<T> = tape; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { detail::active_tape<T> = previous_; }

   private:
    Tape* previous_;
  };

  [[nodiscard]] Scope activate() { return Scope(this); }

  /// Suspends recording on this thread for the lifetime of the guard.
  [[nodiscard]] static Scope pause() { return Scope(nullptr); }

  static Tape* active() { return detail::active_tape<T>; }

  void append(TapeEntry<T> entry) {
    if (consumed_) throw AutogradError("cannot record onto a tape that already ran backward; call reset()");
    entries_.push_back(std::move(entry));
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<TapeEntry<T>>& entries() const { return entries_; }
  bool consumed() const { return consumed_; }

  /// Re-executes every recorded forward rule in order.
  void replay() {
    for (auto& e : entries_) e.forward();
  }

  void backward(Tensor<T> loss) {
    if (consumed_) throw AutogradError("backward already ran on this computation record");
    if (!loss.defined() || loss.numel() != 1) {
      throw AutogradError("backward requires a single-element loss, got shape " +
                          (loss.defined() ? loss.shape().str() : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw AutogradError("loss was not produced by recorded operations");
    bool found = false;
    for (const auto& e : entries_) found = found || e.output.same(loss);
    if (!found) throw AutogradError("loss is not recorded on this tape");

    loss.ensure_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad() || !it->differentiable()) continue;
      it->backward();
    }
    consumed_ = true;
    entries_.clear();
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  std::vector<TapeEntry<T>> entries_;
  bool consumed_ = false;
};

/// Runs `forward` immediately and, when a tape is active and any input
/// requires a gradient, records the operation with its gradient rule.
///
/// This is also the extension point for custom differentiable operations.
/// Pass an empty `backward` to record a non-differentiable operation.
template <typename T>
Tensor<T> record_op(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                    std::function<void()> forward, std::function<void()> backward) {
  forward();
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return output;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return output;
  output.set_requires_grad(true);
  tape->append(TapeEntry<T>{std::move(op), std::move(inputs), output, std::move(forward),
                            std::move(backward)});
  return output;
}

/// True when `t` is defined and receives gradients.
template <typename T>
inline bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

}  // namespace upet
