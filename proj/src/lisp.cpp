// Operator-form syntax: nested applications of p (projection), i
// (intersection), u (union), and n (complement) over relation and constant
// leaves, e.g. (p,(r2),(p,(r1),(s1))). Only tree-shaped queries where every
// existential feeds exactly one projection are expressible.

#include <cctype>
#include <map>
#include <set>
#include <string>
#include <variant>

#include "efoent/ast.hpp"
#include "efoent/errors.hpp"

namespace efoent {

namespace {

// ---------------------------------------------------------------------------
// Reader

struct SExpr {
  std::string symbol;        // set when leaf
  std::vector<SExpr> items;  // set when list
  bool is_list = false;
};

class LispReader {
 public:
  explicit LispReader(std::string_view text) : text_(text) {}

  SExpr read() {
    SExpr e = value();
    skip_space();
    if (pos_ != text_.size()) throw DataError("trailing input after operator form");
    return e;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  char peek() {
    skip_space();
    if (pos_ >= text_.size()) throw DataError("unexpected end of operator form");
    return text_[pos_];
  }
  SExpr value() {
    char c = peek();
    if (c == '(') {
      ++pos_;
      SExpr list;
      list.is_list = true;
      if (peek() == ')') throw DataError("empty list in operator form");
      list.items.push_back(value());
      while (peek() == ',') {
        ++pos_;
        list.items.push_back(value());
      }
      if (peek() != ')') throw DataError("expected ')' in operator form");
      ++pos_;
      return list;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      ++pos_;
      if (pos_ < text_.size() && text_[pos_] == ':') ++pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      SExpr leaf;
      leaf.symbol = std::string(text_.substr(start, pos_ - start));
      return leaf;
    }
    throw DataError(std::string("unexpected character '") + c + "' in operator form");
  }

  std::string_view text_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Compilation into the surface AST

bool is_leaf_of(const SExpr& e, char prefix) {
  return e.is_list && e.items.size() == 1 && !e.items[0].is_list &&
         e.items[0].symbol[0] == prefix;
}

RelRef relation_leaf(const SExpr& e) {
  if (!is_leaf_of(e, 'r'))
    throw DataError("projection expects a relation as first argument");
  // Reuse the EFO symbol grammar by round-tripping through the term parser.
  const std::string& s = e.items[0].symbol;
  bool grounded = s.size() > 1 && s[1] == ':';
  std::string digits = s.substr(grounded ? 2 : 1);
  if (digits.empty()) throw DataError("bad relation symbol: " + s);
  int32_t n = int32_t(std::stol(digits));
  return grounded ? RelRef::id(n) : RelRef::placeholder(n);
}

Term constant_leaf(const SExpr& e) {
  const std::string& s = e.items[0].symbol;
  bool grounded = s.size() > 1 && s[1] == ':';
  std::string digits = s.substr(grounded ? 2 : 1);
  if (digits.empty()) throw DataError("bad constant symbol: " + s);
  int32_t n = int32_t(std::stol(digits));
  return grounded ? Term::constant(n) : Term::placeholder(n);
}

const std::string& op_of(const SExpr& e) {
  if (!e.is_list || e.items.empty() || e.items[0].is_list)
    throw DataError("expected an operator application");
  return e.items[0].symbol;
}

class LispCompiler {
 public:
  QueryAst compile(const SExpr& top) {
    QueryAst ast;
    if (op_of(top) == "u") {
      check_arity(top, "u");
      for (size_t i = 1; i < top.items.size(); ++i) {
        Conjunction c;
        compile_into(top.items[i], Term::free(), c.clauses);
        ast.disjuncts.push_back(std::move(c));
      }
    } else {
      Conjunction c;
      compile_into(top, Term::free(), c.clauses);
      ast.disjuncts.push_back(std::move(c));
    }
    return canonicalized(std::move(ast));
  }

 private:
  static void check_arity(const SExpr& e, const std::string& op) {
    size_t args = e.items.size() - 1;
    bool ok = (op == "p" && args == 2) || (op == "n" && args == 1) ||
              ((op == "i" || op == "u") && args >= 2);
    if (!ok)
      throw DataError("arity violation for operator '" + op + "' (" +
                      std::to_string(args) + " arguments)");
  }

  // Emits the constraints of set expression `e` onto the variable `target`.
  void compile_into(const SExpr& e, Term target, std::vector<Clause>& out) {
    const std::string& op = op_of(e);
    check_arity(e, op);
    if (op == "p") {
      RelRef rel = relation_leaf(e.items[1]);
      const SExpr& input = e.items[2];
      Term head;
      if (is_leaf_of(input, 's')) {
        head = constant_leaf(input);
      } else {
        head = Term::existential(next_existential_++);
        compile_into(input, head, out);
      }
      // The atom is emitted after its input subtree so deeper projections
      // come first in surface order.
      out.push_back(Atom{rel, head, target, false});
      return;
    }
    if (op == "i") {
      for (size_t i = 1; i < e.items.size(); ++i) compile_into(e.items[i], target, out);
      return;
    }
    if (op == "u") {
      UnionGroup g;
      for (size_t i = 1; i < e.items.size(); ++i) {
        std::vector<Clause> branch_clauses;
        compile_into(e.items[i], target, branch_clauses);
        std::vector<Atom> branch;
        for (auto& c : branch_clauses) {
          if (!std::holds_alternative<Atom>(c))
            throw DataError("nested union inside a union branch is not supported");
          branch.push_back(std::get<Atom>(c));
        }
        g.branches.push_back(std::move(branch));
      }
      out.emplace_back(std::move(g));
      return;
    }
    if (op == "n") {
      const SExpr& inner = e.items[1];
      if (op_of(inner) != "p")
        throw DataError("complement must wrap a projection");
      check_arity(inner, "p");
      if (!is_leaf_of(inner.items[2], 's'))
        throw DataError(
            "complement of a projection from a non-constant set is outside the "
            "expressible fragment");
      out.push_back(Atom{relation_leaf(inner.items[1]), constant_leaf(inner.items[2]),
                         target, true});
      return;
    }
    throw DataError("unknown operator '" + op + "'");
  }

  int32_t next_existential_ = 1;
};

// ---------------------------------------------------------------------------
// Conversion from the surface AST

// Variable key: 0 is the free variable, k > 0 is existential e<k>.
int32_t var_key(const Term& t) { return t.kind == Term::Kind::Free ? 0 : t.index; }

struct Producer {
  const Atom* atom = nullptr;
  const UnionGroup* group = nullptr;
};

class ConjConverter {
 public:
  // `atoms_and_groups` is one conjunction scope; `sink` is the variable whose
  // expression we ultimately emit (the free variable, or a union branch's
  // export variable).
  ConjConverter(const std::vector<Clause>& clauses, int32_t sink) : sink_(sink) {
    for (const Clause& c : clauses) {
      if (const auto* a = std::get_if<Atom>(&c)) {
        note_atom(*a);
      } else {
        const auto& g = std::get<UnionGroup>(c);
        groups_.push_back(&g);
      }
    }
  }

  std::string convert() {
    // Union groups produce the single variable they share with the rest of
    // the conjunction.
    for (const UnionGroup* g : groups_) {
      int32_t exported = export_var(*g);
      producers_[exported].push_back({nullptr, g});
    }
    validate();
    std::string out = expr(sink_);
    if (used_ != total_clauses())
      throw DataError("not expressible in operator form: disconnected clause");
    return out;
  }

 private:
  void note_atom(const Atom& a) {
    if (a.tail.is_constant())
      throw DataError("not expressible in operator form: atom with constant tail");
    if (a.negated && !a.head.is_constant())
      throw DataError(
          "not expressible in operator form: negation of a non-constant head");
    producers_[var_key(a.tail)].push_back({&a, nullptr});
    if (!a.negated && a.head.is_variable()) consumed_[var_key(a.head)]++;
    atoms_.push_back(&a);
    if (a.head.is_variable()) vars_.insert(var_key(a.head));
    vars_.insert(var_key(a.tail));
  }

  int32_t export_var(const UnionGroup& g) const {
    // The exported variable is the one occurring both inside the group and in
    // the rest of the conjunction.
    std::set<int32_t> inside;
    for (const auto& b : g.branches)
      for (const Atom& a : b) {
        if (a.head.is_variable()) inside.insert(var_key(a.head));
        if (a.tail.is_variable()) inside.insert(var_key(a.tail));
      }
    std::set<int32_t> outside = vars_;
    std::vector<int32_t> shared;
    for (int32_t v : inside)
      if (outside.count(v)) shared.push_back(v);
    if (shared.size() != 1)
      throw DataError(
          "not expressible in operator form: union group must share exactly one "
          "variable with the conjunction");
    return shared[0];
  }

  size_t total_clauses() const { return atoms_.size() + groups_.size(); }

  void validate() const {
    for (int32_t v : vars_) {
      auto pit = producers_.find(v);
      size_t nproducers = pit == producers_.end() ? 0 : pit->second.size();
      auto cit = consumed_.find(v);
      size_t nconsumed = cit == consumed_.end() ? 0 : cit->second;
      if (v == sink_) {
        if (nconsumed != 0)
          throw DataError(
              "not expressible in operator form: the answer variable feeds a "
              "projection");
        if (nproducers == 0)
          throw DataError("not expressible in operator form: unconstrained answer");
        continue;
      }
      if (nproducers == 0)
        throw DataError("not expressible in operator form: existential leaf");
      if (nconsumed != 1)
        throw DataError(
            "not expressible in operator form: variable used " +
            std::to_string(nconsumed) + " times as a projection input");
    }
  }

  std::string expr(int32_t v) {
    if (in_progress_.count(v))
      throw DataError("not expressible in operator form: cyclic query");
    in_progress_.insert(v);
    auto it = producers_.find(v);
    if (it == producers_.end() || it->second.empty())
      throw DataError("not expressible in operator form: existential leaf");
    std::vector<std::string> parts;
    for (const Producer& p : it->second) parts.push_back(producer_expr(p));
    in_progress_.erase(v);
    if (parts.size() == 1) return parts[0];
    std::string out = "(i";
    for (const auto& s : parts) out += "," + s;
    return out + ")";
  }

  std::string producer_expr(const Producer& p) {
    ++used_;
    if (p.group) {
      std::string out = "(u";
      int32_t exported = export_var(*p.group);
      for (const auto& branch : p.group->branches) {
        std::vector<Clause> scope;
        for (const Atom& a : branch) scope.emplace_back(a);
        ConjConverter sub(scope, exported);
        out += "," + sub.convert();
      }
      return out + ")";
    }
    const Atom& a = *p.atom;
    std::string input =
        a.head.is_constant() ? "(" + a.head.text() + ")" : expr(var_key(a.head));
    if (a.negated) return "(n,(p,(" + a.relation.text() + ")," + input + "))";
    return "(p,(" + a.relation.text() + ")," + input + ")";
  }

  int32_t sink_;
  std::vector<const Atom*> atoms_;
  std::vector<const UnionGroup*> groups_;
  std::map<int32_t, std::vector<Producer>> producers_;
  std::map<int32_t, size_t> consumed_;
  std::set<int32_t> vars_;
  std::set<int32_t> in_progress_;
  size_t used_ = 0;
};

}  // namespace

QueryAst parse_lisp(std::string_view text) {
  LispReader reader(text);
  SExpr top = reader.read();
  LispCompiler compiler;
  return compiler.compile(top);
}

std::string convert_to_lisp(const QueryAst& ast) {
  if (ast.disjuncts.size() > 1) {
    std::string out = "(u";
    for (const Conjunction& c : ast.disjuncts) {
      ConjConverter conv(c.clauses, 0);
      out += "," + conv.convert();
    }
    return out + ")";
  }
  ConjConverter conv(ast.disjuncts[0].clauses, 0);
  return conv.convert();
}

}  // namespace efoent
