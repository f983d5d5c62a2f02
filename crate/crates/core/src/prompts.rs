//! Fixed prompt templates sent to language models.
//!
//! These strings are compared byte-for-byte against golden files in the test
//! suite, including trailing whitespace, so edit them with care.

/// Instruction block prepended to a user prompt when knowledge is injected.
///
/// The trailing `${MODULE CONTENTS}$` is substituted with the serialized documents.
pub const INJECTION_TEMPLATE: &str = concat!(
    " You are a helpful and knowledgeable assistant\n",
    " that provides answers to a user's query.\n",
    "\n",
    " We provide additional knowledge that might\n",
    " be helpful for answering the query.\n",
    "\n",
    " Let's think step by step. \n",
    "\n",
    " 1. Check whether the knowledge is relevant to\n",
    " the query. If the knowledge is relevant,\n",
    " incorporate it when answering.\n",
    "\n",
    " 2. If the knowledge is NOT relevant, disregard\n",
    " the knowledge, do NOT make reference to it,\n",
    " and answer the query. Ignore information that\n",
    " is irrelevant. Do NOT search the web if you\n",
    " have sufficient knowledge.\n",
    "\n",
    " 3. Check whether there are conflicts in\n",
    " the knowledge. Report conflicts in the output\n",
    " if they exist.\n",
    "\n",
    " Knowledge: ${MODULE CONTENTS}$",
);

/// Zero-shot relevance classifier prompt used by the LLM baseline.
pub const CLASSIFIER_PROMPT: &str = concat!(
    "You are a helpful assistant. Your task is to\n",
    "determine whether a document is relevant for\n",
    "answering a given query. \n",
    "\n",
    "Return 1 if the document is RELEVANT and 0 if\n",
    "the document is NOT RELEVANT. Provide only 0 or 1.\n",
    "Do not provide any additional information.",
);

/// Asks a model to restate the task behind a single user message.
pub const TASK_EXTRACTION_PROMPT: &str = concat!(
    "What task is the model being asked to perform\n",
    "in this message?\n",
    "\n",
    "Return just the task in the format \"The task\n",
    "the model is being asked to perform is [TASK].\"\n",
    "Do NOT provide any other information.",
);

/// Asks a model for a two-sentence summary and a short name for a group of tasks.
pub const CLUSTER_SUMMARY_PROMPT: &str = concat!(
    "You are tasked with summarizing a group of\n",
    "related statements into a short, precise, and\n",
    "accurate description and name. Your goal is\n",
    "to create a concise summary that captures the\n",
    "essence of these statements and distinguishes\n",
    "them from other similar groups of statements.\n",
    "    \n",
    "Summarize all the statements into a clear, precise,\n",
    "two-sentence description in the past tense.\n",
    "Your summary should be specific to this group. \n",
    "    \n",
    "After creating the summary, generate a short name\n",
    "for the group of statements. This name should be\n",
    "at most ten words long (perhaps less) and be specific\n",
    "but also reflective of most of the statements\n",
    "(rather than reflecting only one or two). Be as\n",
    "descriptive as possible and assume neither good nor\n",
    "bad faith. Do not hesitate to identify and describe\n",
    "socially harmful or sensitive topics specifically;\n",
    "specificity is necessary for monitoring.\n",
    "\n",
    "Present your output in the following JSON format:\n",
    "{\n",
    "    \"summary\": \n",
    "        \"[Insert your two-sentence summary here]\",\n",
    "    \"name\": \n",
    "        \"[Insert your generated short name here]\"\n",
    "}",
);

/// Placeholder inside [`INJECTION_TEMPLATE`] replaced by the knowledge blocks.
pub const MODULE_CONTENTS_PLACEHOLDER: &str = "${MODULE CONTENTS}$";

/// Sentence frame the task-extraction prompt asks the model to answer in.
pub const TASK_FRAME_PREFIX: &str = "The task the model is being asked to perform is ";
