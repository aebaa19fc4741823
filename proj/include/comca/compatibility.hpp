#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "comca/embedding.hpp"
#include "comca/vocabulary.hpp"

namespace comca {

using CountMatrix = RowMatrix<std::int64_t>;

enum class Smoothing { none, add_one };

struct MatchConfig {
  // A caption token ending in "s"/"es" also matches its singular form.
  bool plurals = true;
  Smoothing smoothing = Smoothing::none;
};

/// Lowercases ASCII and splits on whitespace and ASCII punctuation.
std::vector<std::string> tokenize_caption(std::string_view text);

struct CooccurrenceCounts {
  CountMatrix counts;        // |A| x |O|
  std::size_t records = 0;   // well-formed caption records seen
  std::size_t malformed = 0; // records skipped as CorpusFormat
};

/// Incremental counter for pair co-occurrences; a caption contributes at most
/// one count per (attribute, object) pair. Partial counters merge by addition.
class CooccurrenceCounter {
 public:
  CooccurrenceCounter(const Vocabulary& vocab, MatchConfig cfg = {});

  /// One `id<TAB>caption[<TAB>url]` record, without the trailing newline.
  void add_record(std::string_view line);
  void add_caption(std::string_view caption);
  void merge(const CooccurrenceCounts& partial);

  /// Returns the counts with smoothing applied.
  CooccurrenceCounts result() const;
  const CooccurrenceCounts& raw() const { return counts_; }

 private:
  struct Term {
    std::vector<std::string> tokens;
    std::size_t owner;
    bool is_attribute;
  };

  bool token_matches(const std::string& caption_token, const std::string& term_token) const;

  MatchConfig cfg_;
  std::size_t n_attributes_;
  std::size_t n_objects_;
  std::vector<Term> terms_;
  // first vocabulary token -> term indices
  std::unordered_map<std::string, std::vector<std::size_t>> by_first_;
  CooccurrenceCounts counts_;
};

CooccurrenceCounts count_cooccurrences(std::istream& corpus, const Vocabulary& vocab,
                                       MatchConfig cfg = {});

/// Counts a TSV corpus file, sharded over byte ranges aligned to record
/// boundaries. The result does not depend on `threads`.
CooccurrenceCounts count_cooccurrences_file(const std::filesystem::path& corpus,
                                            const Vocabulary& vocab, MatchConfig cfg = {},
                                            unsigned threads = 1);

enum class CombineMode { multiply, sum, llm_only, db_only, uniform };

const char* to_string(CombineMode mode) noexcept;
CombineMode parse_combine_mode(const std::string& s);

/// Fuses corpus counts with LLM scores elementwise.
template <typename A, typename B>
RowMatrixd fuse_scores(const Eigen::MatrixBase<A>& phi_db, const Eigen::MatrixBase<B>& phi_llm,
                       CombineMode mode) {
  if (phi_db.rows() != phi_llm.rows() || phi_db.cols() != phi_llm.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "phi_db and phi_llm differ in shape");
  }
  const RowMatrixd db = phi_db.template cast<double>();
  const RowMatrixd llm = phi_llm.template cast<double>();
  switch (mode) {
    case CombineMode::multiply: return db.cwiseProduct(llm);
    case CombineMode::sum: return db + llm;
    case CombineMode::llm_only: return llm;
    case CombineMode::db_only: return db;
    case CombineMode::uniform: return RowMatrixd::Ones(db.rows(), db.cols());
  }
  throw Error(ErrorCode::Internal, "unhandled combine mode");
}

struct CompatibilityTable {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;
  CountMatrix phi_db;
  RowMatrixd phi_llm;
  RowMatrixd phi;
  CombineMode combine_mode = CombineMode::multiply;

  /// Checks shapes, count signs, the [0, 10] LLM range, and the multiply identity.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static CompatibilityTable from_json(const nlohmann::json& j);
  static CompatibilityTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

CompatibilityTable make_compatibility_table(const Vocabulary& vocab, CountMatrix phi_db,
                                            RowMatrixd phi_llm, CombineMode mode);

struct AttributeDistribution {
  std::string attribute;
  Vectord probs;
};

/// phi / sum(phi). An all-zero row falls back to uniform with a warning.
AttributeDistribution normalize_distribution(const Eigen::Ref<const Vectord>& phi_row,
                                             std::string attribute = {});

/// p(attribute | object) from the corpus counts: each object's column of
/// phi_db normalized over attributes, returned as an |O| x |A| row-stochastic
/// matrix. Objects never seen with any attribute get a uniform row.
RowMatrixd attribute_given_object(const CompatibilityTable& table);

}  // namespace comca
