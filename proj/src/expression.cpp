#include "divshape/expression.hpp"

#include <boost/fusion/include/adapt_struct.hpp>
#include <boost/spirit/home/x3.hpp>
#include <boost/spirit/home/x3/support/ast/variant.hpp>
#include <algorithm>
#include <array>
#include <cmath>
#include <list>

#include "divshape/error.hpp"
#include "divshape/geometry.hpp"

namespace divshape {
namespace ast {

namespace x3 = boost::spirit::x3;

struct Negated;
struct Chain;
struct Call;

struct Operand : x3::variant<double, std::string, x3::forward_ast<Negated>, x3::forward_ast<Call>,
                             x3::forward_ast<Chain>> {
  using base_type::base_type;
  using base_type::operator=;
};

struct Link {
  char op;
  Operand operand;
};

struct Chain {
  Operand first;
  std::list<Link> rest;
};

struct Negated {
  char sign;
  Operand operand;
};

struct Call {
  std::string name;
  std::vector<Chain> args;
};

}  // namespace ast
}  // namespace divshape

BOOST_FUSION_ADAPT_STRUCT(divshape::ast::Link, op, operand)
BOOST_FUSION_ADAPT_STRUCT(divshape::ast::Chain, first, rest)
BOOST_FUSION_ADAPT_STRUCT(divshape::ast::Negated, sign, operand)
BOOST_FUSION_ADAPT_STRUCT(divshape::ast::Call, name, args)

namespace divshape {
namespace grammar {

namespace x3 = boost::spirit::x3;

x3::rule<class additive, ast::Chain> const additive = "additive";
x3::rule<class multiplicative, ast::Chain> const multiplicative = "multiplicative";
x3::rule<class power, ast::Chain> const power = "power";
x3::rule<class unary, ast::Operand> const unary = "unary";
x3::rule<class negated, ast::Negated> const negated = "negated";
x3::rule<class primary, ast::Operand> const primary = "primary";
x3::rule<class call, ast::Call> const call = "call";
x3::rule<class identifier, std::string> const identifier = "identifier";

auto const identifier_def = x3::lexeme[(x3::alpha | x3::char_('_')) >> *(x3::alnum | x3::char_('_'))];
auto const additive_def = multiplicative >> *(x3::char_("+-") >> multiplicative);
auto const multiplicative_def = unary >> *(x3::char_("*/") >> unary);
auto const unary_def = negated | power;
auto const negated_def = x3::char_("+-") >> unary;
auto const power_def = primary >> *(x3::char_('^') >> unary);
auto const call_def = identifier >> '(' >> (additive % ',') >> ')';
auto const primary_def = x3::double_ | call | identifier | ('(' >> additive >> ')');

BOOST_SPIRIT_DEFINE(additive, multiplicative, power, unary, negated, primary, call, identifier)

}  // namespace grammar

namespace {

constexpr std::array<const char*, 7> kUnary{"sin", "cos", "tan", "exp", "log", "sqrt", "abs"};

double apply_unary(int id, double v) {
  switch (id) {
    case 0: return std::sin(v);
    case 1: return std::cos(v);
    case 2: return std::tan(v);
    case 3: return std::exp(v);
    case 4: return std::log(v);
    case 5: return std::sqrt(v);
    default: return std::abs(v);
  }
}

class Compiler {
 public:
  Compiler(const std::vector<std::string>& vars, std::vector<Expression::Instr>& out) : vars_(vars), out_(out) {}

  void operand(const ast::Operand& o) { boost::apply_visitor([this](const auto& v) { visit(v); }, o); }
  void chain(const ast::Chain& c) {
    operand(c.first);
    for (const ast::Link& l : c.rest) {
      operand(l.operand);
      switch (l.op) {
        case '+': emit(Expression::Op::Add); break;
        case '-': emit(Expression::Op::Sub); break;
        case '*': emit(Expression::Op::Mul); break;
        case '/': emit(Expression::Op::Div); break;
        default: emit(Expression::Op::Pow); break;
      }
    }
  }
  int max_depth() const { return max_depth_; }

 private:
  void visit(double v) { push({Expression::Op::Const, v, 0}); }
  void visit(const std::string& name) {
    if (name == "pi") return push({Expression::Op::Const, kPi, 0});
    const auto it = std::find(vars_.begin(), vars_.end(), name);
    if (it == vars_.end()) throw ConfigError("unknown variable '" + name + "'");
    push({Expression::Op::Var, 0.0, static_cast<int>(it - vars_.begin())});
  }
  void visit(const ast::Negated& n) {
    operand(n.operand);
    if (n.sign == '-') out_.push_back({Expression::Op::Neg, 0.0, 0});
  }
  void visit(const ast::Chain& c) { chain(c); }
  void visit(const ast::Call& c) {
    auto arity = [&](std::size_t n) {
      if (c.args.size() != n)
        throw ConfigError("function '" + c.name + "' takes " + std::to_string(n) + " argument" + (n == 1 ? "" : "s"));
    };
    for (const ast::Chain& a : c.args) chain(a);
    const auto it = std::find_if(kUnary.begin(), kUnary.end(), [&](const char* n) { return c.name == n; });
    if (it != kUnary.end()) {
      arity(1);
      out_.push_back({Expression::Op::Call1, 0.0, static_cast<int>(it - kUnary.begin())});
    } else if (c.name == "min" || c.name == "max" || c.name == "pow") {
      arity(2);
      emit(c.name == "min" ? Expression::Op::Min : c.name == "max" ? Expression::Op::Max : Expression::Op::Pow);
    } else {
      throw ConfigError("unknown function '" + c.name + "'");
    }
  }
  void push(Expression::Instr i) {
    out_.push_back(i);
    max_depth_ = std::max(max_depth_, ++depth_);
  }
  void emit(Expression::Op op) {
    out_.push_back({op, 0.0, 0});
    --depth_;
  }

  const std::vector<std::string>& vars_;
  std::vector<Expression::Instr>& out_;
  int depth_ = 0, max_depth_ = 0;
};

}  // namespace

Expression Expression::parse(const std::string& text, const std::vector<std::string>& variables) {
  namespace x3 = boost::spirit::x3;
  ast::Chain tree;
  auto it = text.begin();
  const bool ok = x3::phrase_parse(it, text.end(), grammar::additive, x3::space, tree);
  if (!ok || it != text.end()) {
    const auto col = static_cast<std::size_t>(it - text.begin()) + 1;
    throw ConfigError("expression '" + text + "': syntax error at column " + std::to_string(col));
  }
  Expression e;
  e.text_ = text;
  e.variables_ = variables;
  try {
    Compiler c(variables, e.program_);
    c.chain(tree);
    e.max_stack_ = c.max_depth();
  } catch (const ConfigError& err) {
    throw ConfigError("expression '" + text + "': " + err.what());
  }
  return e;
}

double Expression::operator()(std::span<const double> values) const {
  if (values.size() != variables_.size()) throw PreconditionError("expression '" + text_ + "': wrong number of values");
  std::array<double, 64> small{};
  std::vector<double> big;
  double* st = small.data();
  if (max_stack_ > static_cast<int>(small.size())) {
    big.resize(static_cast<std::size_t>(max_stack_));
    st = big.data();
  }
  int top = -1;
  for (const Instr& in : program_) {
    switch (in.op) {
      case Op::Const: st[++top] = in.value; break;
      case Op::Var: st[++top] = values[static_cast<std::size_t>(in.index)]; break;
      case Op::Neg: st[top] = -st[top]; break;
      case Op::Call1: st[top] = apply_unary(in.index, st[top]); break;
      case Op::Add: --top; st[top] += st[top + 1]; break;
      case Op::Sub: --top; st[top] -= st[top + 1]; break;
      case Op::Mul: --top; st[top] *= st[top + 1]; break;
      case Op::Div: --top; st[top] /= st[top + 1]; break;
      case Op::Pow: --top; st[top] = std::pow(st[top], st[top + 1]); break;
      case Op::Min: --top; st[top] = std::min(st[top], st[top + 1]); break;
      case Op::Max: --top; st[top] = std::max(st[top], st[top + 1]); break;
    }
  }
  return top == 0 ? st[0] : 0.0;
}

bool Expression::uses(const std::string& variable) const {
  const auto it = std::find(variables_.begin(), variables_.end(), variable);
  if (it == variables_.end()) return false;
  const int idx = static_cast<int>(it - variables_.begin());
  return std::any_of(program_.begin(), program_.end(), [&](const Instr& i) { return i.op == Op::Var && i.index == idx; });
}

}  // namespace divshape
