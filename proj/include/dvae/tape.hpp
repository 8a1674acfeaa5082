#ifndef DVAE_TAPE_HPP
#define DVAE_TAPE_HPP

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <vector>

#include "dvae/matrix.hpp"

namespace dvae::ad {

class Tape;

/// Handle to a node on a tape. Copyable; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op : std::uint8_t {
    Input, Constant,
    Add, Sub, Neg, Transpose,
    MatMul, MatMulNT, MatMulTN,
    Hadamard, Div,
    ScaleConst, ScaleNode, AddRowVec, AddScalarConst,
    Exp, Log, Sqrt, Sigmoid, LeakyRelu, Clamp, Recip,
    Sum, SumSq, Dot, RowOf,
    CholFactorize, CholSolve, CholLogdet,
    LuFactorize, LuSolve,
    Custom,
};

/// User-defined primitive: forward value is supplied at registration time,
/// backward accumulates into the adjoints of the declared inputs.
struct CustomOp {
    virtual ~CustomOp() = default;
    virtual void backward(Tape& tape, int self_id) = 0;
};

struct Node {
    Matrix value;
    Matrix adjoint;               // lazily allocated during backward
    Op op = Op::Constant;
    bool needs_grad = false;
    bool adjoint_set = false;
    double aux = 0.0, aux2 = 0.0; // op-specific constants (scale, slope, bounds, row, flags)
    std::array<int, 2> in{-1, -1};
    std::vector<int> extra_in;    // additional inputs for Custom ops
    std::shared_ptr<void> payload;
};

/// Single-use reverse-mode tape over dense matrices. Scalars are 1x1.
/// Recording and backward are confined to one thread; replaying the same
/// sequence of operations on equal inputs is bit-deterministic.
class Tape {
public:
    Var input(Matrix v);
    Var constant(Matrix v);
    Var constant_scalar(double v);

    const Matrix& value(int id) const { return nodes_[id].value; }
    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    const Matrix& grad(Var v) const;
    bool has_grad(Var v) const { return nodes_[v.id].adjoint_set; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    size_t size() const { return nodes_.size(); }

    /// Seeds a scalar output with 1 and runs reverse accumulation.
    /// With release=true intermediate values/adjoints are freed as soon as
    /// they are no longer needed; leaf nodes are kept.
    void backward(Var seed, bool release = true);

    /// Adds m into the adjoint of node id (no-op for non-grad subgraphs).
    void accumulate(int id, const Matrix& m);
    void accumulate_scaled(int id, const Matrix& m, double s);

    int emit(Node n);
    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }

private:
    std::deque<Node> nodes_;  // stable storage: growth must not copy recorded values
};

// -- op builders ------------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var transpose(Var a);
Var matmul(Var a, Var b);      // A B
Var matmul_nt(Var a, Var b);   // A B^T
Var matmul_tn(Var a, Var b);   // A^T B
Var hadamard(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var scale_by(Var m, Var s);    // m * s, s scalar node
Var add_rowvec(Var m, Var r);  // m (N x d) + broadcast row r (1 x d)
Var add_const(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope);
Var clamp(Var a, double lo, double hi);
Var recip(Var a);
Var sum(Var a);                // 1x1
Var sum_sq(Var a);             // 1x1
Var dot(Var a, Var b);         // 1x1
Var row_of(Var m, int i);      // 1 x cols

Var chol_factorize(Var a);                 // opaque factor node
Var chol_solve(Var f, Var b);
Var chol_logdet(Var f);
Var lu_factorize(Var a);
Var lu_solve(Var f, Var b, bool trans = false);

/// solve_spd / logdet_spd on tape (factor + solve composition)
Var solve_spd(Var a, Var b);
Var logdet_spd(Var a);

/// Emits a custom node. `value` is the precomputed forward value; inputs
/// are the nodes whose adjoints `op->backward` will touch.
Var custom(Tape& t, Matrix value, std::vector<Var> inputs, std::shared_ptr<CustomOp> op);

} // namespace dvae::ad

#endif
