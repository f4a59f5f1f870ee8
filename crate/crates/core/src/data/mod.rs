pub mod dataset;
pub mod embeddings;
pub mod entities;
pub mod formats;
pub mod kb;
pub mod synthetic;

pub use dataset::{load_dataset, parse_dataset, save_dataset, AnswerVocab, Detection, QuestionKind, Sample, Split};
pub use embeddings::{load_embeddings, parse_embeddings, tokenize, EmbeddingTable, DEFAULT_WORD_DIM};
pub use entities::extract_question_entities;
pub use kb::{load_kb, parse_triples, save_triples, Fact, KnowledgeBase, Triple, DEFAULT_KB};
pub use synthetic::{solve_symbolic, GeneratedDataset, OneStepStyle, SyntheticWorld, Template};
pub use formats::{load_fvqa, load_krvqr, DataFormat, ExternalData};
