pub mod chain;
pub mod compliance;
pub mod endpoint;
pub mod refinement;
pub mod sanitize;
pub mod schema;

pub use compliance::{validate_schema_compliance, TermRole, Violation};
pub use endpoint::{EndpointError, HttpSparqlEndpoint, MemoryEndpoint, RdfTerm, SelectResults, SparqlEndpoint};
pub use sanitize::{check_query_syntax, sanitize_query, used_prefixes, NoSelectQuery};
pub use schema::{Inventory, SchemaDocument, SchemaError};
pub use chain::{
    is_effectively_empty,
    AttemptStatus, ChainError, ChainObserver, ChainOutcome, ChainResources, Diagnosis, NoopObserver, ResultPayload,
    SparqlAttempt, SparqlChain, DATA_ABSENT_MESSAGE, SPILL_NOTICE,
};
pub use refinement::{Exemplar, RefinementStore, StoreError};
