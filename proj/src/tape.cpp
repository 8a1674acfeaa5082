#include "dvae/tape.hpp"

#include <cmath>

#include "dvae/errors.hpp"

namespace dvae::ad {

namespace {
Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw dim_error("operands recorded on different tapes");
    return *a.tape;
}

const CholFactor& chol_payload(const Node& n) {
    return *std::static_pointer_cast<CholFactor>(n.payload);
}
const LuFactor& lu_payload(const Node& n) {
    return *std::static_pointer_cast<LuFactor>(n.payload);
}
} // namespace

int Tape::emit(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::input(Matrix v) {
    Node n;
    n.value = std::move(v);
    n.op = Op::Input;
    n.needs_grad = true;
    return Var{this, emit(std::move(n))};
}

Var Tape::constant(Matrix v) {
    Node n;
    n.value = std::move(v);
    n.op = Op::Constant;
    return Var{this, emit(std::move(n))};
}

Var Tape::constant_scalar(double v) { return constant(Matrix(1, 1, {v})); }

const Matrix& Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.adjoint_set)
        throw numeric_error("gradient requested for a node backward never reached");
    return n.adjoint;
}

void Tape::accumulate(int id, const Matrix& m) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (!n.adjoint_set) {
        n.adjoint = m;
        n.adjoint_set = true;
    } else {
        if (!n.adjoint.same_shape(m))
            throw dim_error("adjoint shape mismatch: " + shape_str(n.adjoint) + " vs " +
                            shape_str(m));
        for (long long i = 0; i < m.size(); ++i) n.adjoint[i] += m[i];
    }
}

void Tape::accumulate_scaled(int id, const Matrix& m, double s) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (!n.adjoint_set) {
        n.adjoint = scale(m, s);
        n.adjoint_set = true;
    } else {
        for (long long i = 0; i < m.size(); ++i) n.adjoint[i] += s * m[i];
    }
}

namespace {

Var unary(Var a, Op op, Matrix value, double aux = 0.0, double aux2 = 0.0) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.in[0] = a.id;
    n.aux = aux;
    n.aux2 = aux2;
    n.needs_grad = a.tape->needs_grad(a.id);
    return Var{a.tape, a.tape->emit(std::move(n))};
}

Var binary(Var a, Var b, Op op, Matrix value, double aux = 0.0) {
    Tape& t = same_tape(a, b);
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.aux = aux;
    n.needs_grad = t.needs_grad(a.id) || t.needs_grad(b.id);
    return Var{&t, t.emit(std::move(n))};
}

Matrix map_unary(const Matrix& a, double (*f)(double)) {
    Matrix c(a.rows(), a.cols());
    for (long long i = 0; i < a.size(); ++i) c[i] = f(a[i]);
    return c;
}

} // namespace

Var add(Var a, Var b) { return binary(a, b, Op::Add, dvae::add(a.tape->value(a), b.tape->value(b))); }
Var sub(Var a, Var b) { return binary(a, b, Op::Sub, dvae::sub(a.tape->value(a), b.tape->value(b))); }
Var neg(Var a) { return unary(a, Op::Neg, scale(a.tape->value(a), -1.0)); }
Var transpose(Var a) { return unary(a, Op::Transpose, dvae::transpose(a.tape->value(a))); }

Var matmul(Var a, Var b) {
    return binary(a, b, Op::MatMul, dvae::matmul(a.tape->value(a), b.tape->value(b)));
}
Var matmul_nt(Var a, Var b) {
    return binary(a, b, Op::MatMulNT, dvae::matmul_nt(a.tape->value(a), b.tape->value(b)));
}
Var matmul_tn(Var a, Var b) {
    return binary(a, b, Op::MatMulTN, dvae::matmul_tn(a.tape->value(a), b.tape->value(b)));
}
Var hadamard(Var a, Var b) {
    return binary(a, b, Op::Hadamard, dvae::hadamard(a.tape->value(a), b.tape->value(b)));
}
Var div(Var a, Var b) {
    const Matrix& x = a.tape->value(a);
    const Matrix& y = b.tape->value(b);
    if (!x.same_shape(y)) throw dim_error("div " + shape_str(x) + " / " + shape_str(y));
    Matrix c(x.rows(), x.cols());
    for (long long i = 0; i < x.size(); ++i) c[i] = x[i] / y[i];
    return binary(a, b, Op::Div, std::move(c));
}

Var scale(Var a, double c) { return unary(a, Op::ScaleConst, dvae::scale(a.tape->value(a), c), c); }

Var scale_by(Var m, Var s) {
    const Matrix& sv = s.tape->value(s);
    if (!sv.is_scalar()) throw dim_error("scale_by expects a 1x1 scale, got " + shape_str(sv));
    return binary(m, s, Op::ScaleNode, dvae::scale(m.tape->value(m), sv.scalar()));
}

Var add_rowvec(Var m, Var r) {
    const Matrix& mv = m.tape->value(m);
    const Matrix& rv = r.tape->value(r);
    if (rv.rows() != 1 || rv.cols() != mv.cols())
        throw dim_error("add_rowvec " + shape_str(mv) + " + " + shape_str(rv));
    Matrix c(mv.rows(), mv.cols());
    for (int i = 0; i < mv.rows(); ++i)
        for (int j = 0; j < mv.cols(); ++j) c(i, j) = mv(i, j) + rv(0, j);
    return binary(m, r, Op::AddRowVec, std::move(c));
}

Var add_const(Var a, double c) {
    const Matrix& av = a.tape->value(a);
    Matrix out(av.rows(), av.cols());
    for (long long i = 0; i < av.size(); ++i) out[i] = av[i] + c;
    return unary(a, Op::AddScalarConst, std::move(out), c);
}

Var exp(Var a) { return unary(a, Op::Exp, map_unary(a.tape->value(a), [](double x) { return std::exp(x); })); }
Var log(Var a) { return unary(a, Op::Log, map_unary(a.tape->value(a), [](double x) { return std::log(x); })); }
Var sqrt(Var a) { return unary(a, Op::Sqrt, map_unary(a.tape->value(a), [](double x) { return std::sqrt(x); })); }

Var sigmoid(Var a) {
    return unary(a, Op::Sigmoid,
                 map_unary(a.tape->value(a), [](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
}

Var leaky_relu(Var a, double slope) {
    const Matrix& av = a.tape->value(a);
    Matrix c(av.rows(), av.cols());
    for (long long i = 0; i < av.size(); ++i) c[i] = av[i] > 0.0 ? av[i] : slope * av[i];
    return unary(a, Op::LeakyRelu, std::move(c), slope);
}

Var clamp(Var a, double lo, double hi) {
    const Matrix& av = a.tape->value(a);
    Matrix c(av.rows(), av.cols());
    for (long long i = 0; i < av.size(); ++i) c[i] = std::min(hi, std::max(lo, av[i]));
    return unary(a, Op::Clamp, std::move(c), lo, hi);
}

Var recip(Var a) {
    return unary(a, Op::Recip, map_unary(a.tape->value(a), [](double x) { return 1.0 / x; }));
}

Var sum(Var a) { return unary(a, Op::Sum, Matrix(1, 1, {dvae::sum(a.tape->value(a))})); }
Var sum_sq(Var a) { return unary(a, Op::SumSq, Matrix(1, 1, {dvae::sum_sq(a.tape->value(a))})); }

Var dot(Var a, Var b) {
    return binary(a, b, Op::Dot, Matrix(1, 1, {dvae::dot(a.tape->value(a), b.tape->value(b))}));
}

Var row_of(Var m, int i) {
    const Matrix& mv = m.tape->value(m);
    if (i < 0 || i >= mv.rows()) throw dim_error("row_of index out of range");
    Matrix r(1, mv.cols());
    for (int j = 0; j < mv.cols(); ++j) r(0, j) = mv(i, j);
    return unary(m, Op::RowOf, std::move(r), static_cast<double>(i));
}

Var chol_factorize(Var a) {
    auto f = std::make_shared<CholFactor>(cholesky(a.tape->value(a)));
    Node n;
    n.op = Op::CholFactorize;
    n.in[0] = a.id;
    n.payload = std::move(f);
    n.needs_grad = a.tape->needs_grad(a.id);
    // adjoint of the factor node is shaped like the factorized matrix
    return Var{a.tape, a.tape->emit(std::move(n))};
}

Var chol_solve(Var f, Var b) {
    const Node& fn = f.tape->node(f.id);
    if (fn.op != Op::CholFactorize) throw dim_error("chol_solve expects a factor node");
    return binary(f, b, Op::CholSolve, dvae::chol_solve(chol_payload(fn), b.tape->value(b)));
}

Var chol_logdet(Var f) {
    const Node& fn = f.tape->node(f.id);
    if (fn.op != Op::CholFactorize) throw dim_error("chol_logdet expects a factor node");
    return unary(f, Op::CholLogdet, Matrix(1, 1, {chol_payload(fn).logdet()}));
}

Var lu_factorize(Var a) {
    auto f = std::make_shared<LuFactor>(dvae::lu_factorize(a.tape->value(a)));
    Node n;
    n.op = Op::LuFactorize;
    n.in[0] = a.id;
    n.payload = std::move(f);
    n.needs_grad = a.tape->needs_grad(a.id);
    return Var{a.tape, a.tape->emit(std::move(n))};
}

Var lu_solve(Var f, Var b, bool trans) {
    const Node& fn = f.tape->node(f.id);
    if (fn.op != Op::LuFactorize) throw dim_error("lu_solve expects a factor node");
    return binary(f, b, Op::LuSolve,
                  dvae::lu_solve(lu_payload(fn), b.tape->value(b), trans), trans ? 1.0 : 0.0);
}

Var solve_spd(Var a, Var b) { return chol_solve(chol_factorize(a), b); }
Var logdet_spd(Var a) { return chol_logdet(chol_factorize(a)); }

Var custom(Tape& t, Matrix value, std::vector<Var> inputs, std::shared_ptr<CustomOp> op) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Custom;
    n.payload = std::move(op);
    bool ng = false;
    for (size_t k = 0; k < inputs.size(); ++k) {
        if (inputs[k].tape != &t) throw dim_error("custom op input from another tape");
        ng = ng || t.needs_grad(inputs[k].id);
        if (k < 2)
            n.in[k] = inputs[k].id;
        else
            n.extra_in.push_back(inputs[k].id);
    }
    n.needs_grad = ng;
    return Var{&t, t.emit(std::move(n))};
}

// -- backward ---------------------------------------------------------------

void Tape::backward(Var seed, bool release) {
    if (seed.tape != this) throw dim_error("backward seed from another tape");
    if (!value(seed).is_scalar())
        throw dim_error("backward seed must be scalar, got " + shape_str(value(seed)));
    accumulate(seed.id, Matrix(1, 1, {1.0}));

    for (int id = seed.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || !n.adjoint_set) {
            if (release && n.op != Op::Input && n.op != Op::Constant && id != seed.id)
                n.value = Matrix();
            continue;
        }
        const Matrix& g = n.adjoint;
        const int a = n.in[0], b = n.in[1];
        switch (n.op) {
        case Op::Input:
        case Op::Constant:
            break;
        case Op::Add:
            accumulate(a, g);
            accumulate(b, g);
            break;
        case Op::Sub:
            accumulate(a, g);
            accumulate_scaled(b, g, -1.0);
            break;
        case Op::Neg:
            accumulate_scaled(a, g, -1.0);
            break;
        case Op::Transpose:
            accumulate(a, dvae::transpose(g));
            break;
        case Op::MatMul:
            if (needs_grad(a)) accumulate(a, dvae::matmul_nt(g, nodes_[b].value));
            if (needs_grad(b)) accumulate(b, dvae::matmul_tn(nodes_[a].value, g));
            break;
        case Op::MatMulNT:  // C = A B^T
            if (needs_grad(a)) accumulate(a, dvae::matmul(g, nodes_[b].value));
            if (needs_grad(b)) accumulate(b, dvae::matmul_tn(g, nodes_[a].value));
            break;
        case Op::MatMulTN:  // C = A^T B
            if (needs_grad(a)) accumulate(a, dvae::matmul_nt(nodes_[b].value, g));
            if (needs_grad(b)) accumulate(b, dvae::matmul(nodes_[a].value, g));
            break;
        case Op::Hadamard:
            if (needs_grad(a)) accumulate(a, dvae::hadamard(g, nodes_[b].value));
            if (needs_grad(b)) accumulate(b, dvae::hadamard(g, nodes_[a].value));
            break;
        case Op::Div: {
            const Matrix& y = nodes_[b].value;
            if (needs_grad(a)) {
                Matrix ga(g.rows(), g.cols());
                for (long long i = 0; i < g.size(); ++i) ga[i] = g[i] / y[i];
                accumulate(a, ga);
            }
            if (needs_grad(b)) {
                const Matrix& c = n.value;  // a / b
                Matrix gb(g.rows(), g.cols());
                for (long long i = 0; i < g.size(); ++i) gb[i] = -g[i] * c[i] / y[i];
                accumulate(b, gb);
            }
            break;
        }
        case Op::ScaleConst:
            accumulate_scaled(a, g, n.aux);
            break;
        case Op::ScaleNode: {
            const double s = nodes_[b].value.scalar();
            if (needs_grad(a)) accumulate_scaled(a, g, s);
            if (needs_grad(b)) accumulate(b, Matrix(1, 1, {dvae::dot(nodes_[a].value, g)}));
            break;
        }
        case Op::AddRowVec: {
            accumulate(a, g);
            if (needs_grad(b)) {
                Matrix gr(1, g.cols());
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
                accumulate(b, gr);
            }
            break;
        }
        case Op::AddScalarConst:
            accumulate(a, g);
            break;
        case Op::Exp:
            accumulate(a, dvae::hadamard(g, n.value));
            break;
        case Op::Log: {
            const Matrix& x = nodes_[a].value;
            Matrix ga(g.rows(), g.cols());
            for (long long i = 0; i < g.size(); ++i) ga[i] = g[i] / x[i];
            accumulate(a, ga);
            break;
        }
        case Op::Sqrt: {
            Matrix ga(g.rows(), g.cols());
            for (long long i = 0; i < g.size(); ++i) ga[i] = 0.5 * g[i] / n.value[i];
            accumulate(a, ga);
            break;
        }
        case Op::Sigmoid: {
            Matrix ga(g.rows(), g.cols());
            for (long long i = 0; i < g.size(); ++i)
                ga[i] = g[i] * n.value[i] * (1.0 - n.value[i]);
            accumulate(a, ga);
            break;
        }
        case Op::LeakyRelu: {
            const Matrix& x = nodes_[a].value;
            Matrix ga(g.rows(), g.cols());
            for (long long i = 0; i < g.size(); ++i) ga[i] = g[i] * (x[i] > 0.0 ? 1.0 : n.aux);
            accumulate(a, ga);
            break;
        }
        case Op::Clamp: {
            const Matrix& x = nodes_[a].value;
            Matrix ga(g.rows(), g.cols());
            for (long long i = 0; i < g.size(); ++i)
                ga[i] = (x[i] > n.aux && x[i] < n.aux2) ? g[i] : 0.0;
            accumulate(a, ga);
            break;
        }
        case Op::Recip: {
            Matrix ga(g.rows(), g.cols());
            for (long long i = 0; i < g.size(); ++i) ga[i] = -g[i] * n.value[i] * n.value[i];
            accumulate(a, ga);
            break;
        }
        case Op::Sum: {
            const double s = g.scalar();
            const Matrix& x = nodes_[a].value;
            accumulate(a, Matrix::filled(x.rows(), x.cols(), s));
            break;
        }
        case Op::SumSq:
            accumulate_scaled(a, nodes_[a].value, 2.0 * g.scalar());
            break;
        case Op::Dot: {
            const double s = g.scalar();
            if (needs_grad(a)) accumulate_scaled(a, nodes_[b].value, s);
            if (needs_grad(b)) accumulate_scaled(b, nodes_[a].value, s);
            break;
        }
        case Op::RowOf: {
            const Matrix& x = nodes_[a].value;
            const int r = static_cast<int>(n.aux);
            Node& an = nodes_[a];
            if (an.needs_grad) {
                if (!an.adjoint_set) {
                    an.adjoint = Matrix(x.rows(), x.cols());
                    an.adjoint_set = true;
                }
                for (int j = 0; j < x.cols(); ++j) an.adjoint(r, j) += g(0, j);
            }
            break;
        }
        case Op::CholFactorize:
            // factor adjoint is shaped like the factorized matrix
            accumulate(a, g);
            break;
        case Op::CholSolve: {
            const CholFactor& f = chol_payload(nodes_[a]);
            Matrix gb = dvae::chol_solve(f, g);
            if (needs_grad(a)) accumulate(a, scale(dvae::matmul_nt(gb, n.value), -1.0));
            if (needs_grad(b)) accumulate(b, gb);
            break;
        }
        case Op::CholLogdet: {
            const CholFactor& f = chol_payload(nodes_[a]);
            accumulate(a, scale(symmetrize(chol_inverse(f)), g.scalar()));
            break;
        }
        case Op::LuFactorize:
            accumulate(a, g);
            break;
        case Op::LuSolve: {
            const LuFactor& f = lu_payload(nodes_[a]);
            const bool trans = n.aux != 0.0;
            Matrix gb = dvae::lu_solve(f, g, !trans);
            if (needs_grad(a)) {
                Matrix ga = trans ? dvae::matmul_nt(n.value, gb) : dvae::matmul_nt(gb, n.value);
                accumulate(a, scale(ga, -1.0));
            }
            if (needs_grad(b)) accumulate(b, gb);
            break;
        }
        case Op::Custom:
            std::static_pointer_cast<CustomOp>(n.payload)->backward(*this, id);
            break;
        }
        if (release && n.op != Op::Input) {
            if (n.op != Op::Constant && id != seed.id) n.value = Matrix();
            n.adjoint = Matrix();
            n.adjoint_set = false;
        }
    }
}

} // namespace dvae::ad
