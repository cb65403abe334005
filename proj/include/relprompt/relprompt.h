#ifndef RELPROMPT_RELPROMPT_H
#define RELPROMPT_RELPROMPT_H

#if defined(_WIN32)
#define RP_API __declspec(dllexport)
#else
#define RP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rp_status {
  RP_OK = 0,
  RP_ERROR_USAGE = 1,    /* invalid argument (null pointer, bad value) */
  RP_ERROR_DATA = 2,     /* malformed or insufficient input data */
  RP_ERROR_CONFIG = 3,   /* invalid configuration */
  RP_ERROR_IO = 4,       /* file could not be read or written */
  RP_ERROR_NUMERIC = 5,  /* NaN/Inf during training */
  RP_ERROR_INTERNAL = 6
} rp_status;

/* Fine-tuned intent classifier loaded from a model file. */
typedef struct rp_model rp_model;

RP_API const char* rp_version(void);

/* Message of the last failed call on this thread ("" if none). */
RP_API const char* rp_last_error(void);

/* Releases strings returned through char** out-parameters. */
RP_API void rp_string_free(char* text);

/* Configuration sections are JSON objects; NULL or "" selects the defaults.
   Unknown keys are rejected with RP_ERROR_CONFIG. */

/* Full run configuration (defaults merged with a .json or sectioned
   key-value file) as a JSON document. */
RP_API rp_status rp_load_config(const char* path, char** config_json);

/* Synthetic corpus: session, labeled and schema files. */
RP_API rp_status rp_generate_corpus(const char* corpus_json, const char* sessions_path, const char* labeled_path,
                                    const char* schema_path);

/* Vocabulary over session queries/answers and (optionally) intent names. */
RP_API rp_status rp_build_vocab(const char* sessions_path, const char* schema_path, const char* tokenizer_json,
                                const char* vocab_path);

/* Structure-aware MLM pretraining. `log_path` (nullable) receives one JSON
   line per epoch: {"epoch", "mean_loss", "wall_seconds"}. */
RP_API rp_status rp_pretrain(const char* sessions_path, const char* vocab_path, const char* model_json,
                             const char* pretrain_json, const char* checkpoint_path, const char* log_path);

/* Samples a K-shot episode (seeded by the finetune seed), fine-tunes and
   writes the model. `summary_json` (nullable) receives the grid results and
   test-split metrics. */
RP_API rp_status rp_finetune(const char* checkpoint_path, const char* labeled_path, const char* schema_path,
                             unsigned shots, const char* finetune_json, const char* model_path, char** summary_json);

RP_API rp_status rp_model_load(const char* model_path, rp_model** model);
RP_API void rp_model_free(rp_model* model);

/* {"intent", "intent_id", "probabilities"} plus "lambda_qq", "lambda_qa" and
   "dominance" under QueryAdapt. Safe to call concurrently on one model. */
RP_API rp_status rp_model_predict(const rp_model* model, const char* query, char** result_json);

/* Runs the experiment matrix of a full run configuration. With all data
   paths NULL the synthetic corpus from the config is used. Writes the report
   and `<report>.timing.json`; progress goes to stderr when verbose != 0. */
RP_API rp_status rp_run_experiment(const char* config_json, const char* sessions_path, const char* labeled_path,
                                   const char* schema_path, const char* report_path, int verbose);

/* Debug rendering of a prompt. Request keys: "query" (required), one of
   "intent" / "partner" (with "relation": "qq" | "qa"), "m", "max_len",
   "vocab" (path; otherwise built from the request texts), "show_pad". */
RP_API rp_status rp_inspect_prompt(const char* request_json, char** rendering);

/* Lowercase hex SHA-256 of a file. */
RP_API rp_status rp_file_digest(const char* path, char** hex);

#ifdef __cplusplus
}
#endif

#endif /* RELPROMPT_RELPROMPT_H */
