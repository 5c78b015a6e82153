//! Prompt templates for the model-facing stages, with builtin defaults and
//! optional per-deployment overrides loaded from a directory of `.txt` files
//! (file stem = template name).
//!
//! Placeholders are literal `{name}` markers substituted by the stage that
//! owns the template:
//!
//! - `rerank`: `{query}`, `{documents}`
//! - `recap`: `{question}`, `{document}`
//! - `refine`: `{content}`

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

/// Name of the reranking template.
pub const RERANK_TEMPLATE: &str = "rerank";
/// Name of the structured reasoning template.
pub const RECAP_TEMPLATE: &str = "recap";
/// Name of the summary-refinement template used in model summarizer mode.
pub const REFINE_TEMPLATE: &str = "refine";

const BUILTIN_RERANK: &str = "\
You are ranking candidate documents for how well they can answer a query.
Query: {query}

Candidate documents:
{documents}
Reply with the document ids only, most relevant first, separated by commas. \
Use only ids that appear above.
";

// The reasoning prompt carries exactly one worked example, and each of the
// five stage labels appears exactly once (inside that example); the model is
// expected to mirror them.
const BUILTIN_RECAP: &str = "\
Answer the question using only the document below. Work in five stages: \
restate the question and classify its type, extract the relevant evidence, \
compute what needs computing, decide on the answer, and present it. Label \
the stages exactly as the example does. In the computation stage, put the \
final formula on its own line prefixed with FORMULA: and write \"FORMULA: \
none\" when no calculation is needed.

Example
Question: By what percentage did staffing costs rise from 430.1 in 2013 to 452.3 in 2014?
Restate: The question asks for the percentage increase in staffing costs between 2013 and 2014. Type: numerical.
Extract: staffing costs 2013 = 430.1; staffing costs 2014 = 452.3
Compute: percentage increase = (452.3 - 430.1) / 430.1 * 100
FORMULA: (452.3-430.1)/430.1*100
Answer: Staffing costs rose by about 5.16 percent.
Present: 5.16%

Document:
{document}

Question: {question}
";

const BUILTIN_REFINE: &str = "\
Rewrite the following table facts as one concise sentence, keeping every \
label and every value:
{content}
";

/// An immutable set of named prompt templates.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl PromptSet {
    /// The builtin templates only.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(RERANK_TEMPLATE.to_string(), BUILTIN_RERANK.to_string());
        templates.insert(RECAP_TEMPLATE.to_string(), BUILTIN_RECAP.to_string());
        templates.insert(REFINE_TEMPLATE.to_string(), BUILTIN_REFINE.to_string());
        PromptSet { templates }
    }

    /// Builtin templates plus overrides from every `.txt` file in `dir`
    /// (file stem names the template). Unknown names are allowed; they are
    /// reachable via [`PromptSet::get`] for custom summarizer prompts.
    pub fn load_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let mut set = Self::builtin();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?
            .collect::<io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        entries.sort();
        for path in entries {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path)?;
            set.templates.insert(stem.to_string(), body);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// The rerank template (always present).
    pub fn rerank(&self) -> &str {
        self.get(RERANK_TEMPLATE).expect("builtin rerank template")
    }

    /// The reasoning template (always present).
    pub fn recap(&self) -> &str {
        self.get(RECAP_TEMPLATE).expect("builtin recap template")
    }

    /// The refinement template (always present).
    pub fn refine(&self) -> &str {
        self.get(REFINE_TEMPLATE).expect("builtin refine template")
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
