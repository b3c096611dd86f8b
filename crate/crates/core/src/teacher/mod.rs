//! Boundary teachers. [`semantic`] is the bidirectional text tagger trained
//! on punctuated written text; [`pause`] is the acoustic baseline that
//! marks every long silence.

pub mod pause;
pub mod semantic;

pub use pause::{pause_teacher_annotate, DEFAULT_SILENCE_THRESHOLD_MS};
pub use semantic::{
    teacher_eval, teacher_forward, teacher_predict, teacher_train, History, TeacherEval,
    TeacherHyper, TeacherParams,
};
