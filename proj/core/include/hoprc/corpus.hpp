#pragma once

#include <cstddef>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace hoprc {

/// Question tuple <s, r, ?>. `tokens` is the linearization fed to the
/// encoder: relation tokens (underscores split) followed by subject tokens.
struct Question {
    std::string subject;
    std::string relation;
    std::vector<std::string> tokens;
};

struct Sample {
    std::string id;
    Question question;
    std::vector<std::string> supports;    // raw document texts
    std::vector<std::string> candidates;  // normalized
    std::string answer;                   // normalized; meaningful iff has_answer
    bool has_answer = false;
};

/// Half-open token range [begin, end).
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    bool operator==(const TokenSpan&) const = default;
};

struct TokenizedDoc {
    int doc_id = 0;
    std::vector<std::string> tokens;  // original casing
    std::vector<std::string> lower;   // lowercased copies
    // character offsets into the source text; needed by the sentence
    // splitter to tell attached punctuation from spaced punctuation
    std::vector<std::size_t> char_begin;
    std::vector<std::size_t> char_end;
    std::vector<TokenSpan> sentence_spans;  // disjoint, sorted, cover [0, tokens)

    std::size_t sentence_of(std::size_t token_index) const;
};

enum class MentionKind { Subject = 0, Reasoning = 1, Candidate = 2 };

const char* mention_kind_name(MentionKind kind);
MentionKind mention_kind_from_name(const std::string& name);

struct Mention {
    std::string entity_key;  // normalized
    MentionKind kind = MentionKind::Reasoning;
    int doc_id = 0;
    TokenSpan span;
    std::size_t sentence_index = 0;
};

/// Canonical entity form: lowercase word/punctuation tokens with outer
/// punctuation stripped, joined by single spaces. Idempotent.
std::string normalize_entity(const std::string& text);

/// Lowercased tokens of a string under the same rules as tokenize_and_split.
std::vector<std::string> tokenize_words(const std::string& text);

/// Rule tokenizer + sentence splitter. Tokens are maximal alphanumeric runs
/// or single punctuation marks; sentences split on . ! ? followed by
/// whitespace and an uppercase letter (or end of text), with an
/// abbreviation list suppressing false splits.
TokenizedDoc tokenize_and_split(const std::string& text, int doc_id);

/// Exact token-sequence matching of normalized targets. Overlapping matches
/// of different targets are all kept; overlapping matches of one target keep
/// the longest-then-leftmost. Matches crossing a sentence boundary are
/// discarded. Output sorted by (doc_id, span.begin, span.end, kind).
std::vector<Mention> find_mentions(const TokenizedDoc& doc,
                                   const std::vector<std::pair<std::string, MentionKind>>& targets);

/// Capitalization heuristic for reasoning-entity spans: maximal runs of
/// capitalized tokens (allowing internal of/the/&), skipping sentence-initial
/// stopwords; spans whose normalized text is in `excluded_keys` (the subject
/// and the candidates) are dropped.
std::vector<Mention> detect_reasoning_spans(const TokenizedDoc& doc,
                                            const std::unordered_set<std::string>& excluded_keys);

// ------------------------------------------------------------------ records

/// Parse one structured record (WikiHop layout: id, query, supports,
/// candidates, optional answer). Throws DataError naming the missing field.
Sample parse_sample(const std::string& record_json);
std::string sample_to_json(const Sample& sample);

/// Load samples from a line-delimited file, or a single JSON array file
/// (the public WikiHop distribution shape).
std::vector<Sample> load_samples(const std::string& path);
void save_samples(const std::string& path, const std::vector<Sample>& samples);

// ------------------------------------------------------------- ingest output

struct IngestedSample {
    Sample sample;
    std::vector<TokenizedDoc> docs;
    std::vector<Mention> mentions;  // sorted by (doc_id, span.begin, span.end, kind)
};

/// Tokenize all supports and locate subject / candidate / reasoning mentions.
IngestedSample ingest_sample(const Sample& sample);

std::vector<IngestedSample> load_ingested(const std::string& path);
void save_ingested(const std::string& path, const std::vector<IngestedSample>& samples);

std::string ingested_to_json(const IngestedSample& s);
IngestedSample ingested_from_json(const std::string& line);

}  // namespace hoprc
