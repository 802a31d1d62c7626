use super::net::{Arch, SegNet};
use crate::error::{DtsError, Result};

/// A student and its EMA teacher.
#[derive(Clone, Debug)]
pub struct ModelGroup {
    pub id: u8,
    pub student: SegNet,
    pub teacher: SegNet,
}

/// Seeds the student and copies it into the teacher.
pub fn init_group(id: u8, arch: &Arch, seed: u64) -> Result<ModelGroup> {
    let student = SegNet::init(arch, seed)?;
    Ok(ModelGroup {
        id,
        teacher: student.clone(),
        student,
    })
}

/// `teacher <- lambda * teacher + (1 - lambda) * student`, elementwise.
pub fn ema_update(group: &mut ModelGroup, lambda: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DtsError::InvalidArgument(format!(
            "EMA coefficient {lambda} outside [0, 1]"
        )));
    }
    if group.teacher.arch() != group.student.arch() {
        return Err(DtsError::dim("teacher and student architectures differ"));
    }
    let keep = 1.0 - lambda;
    for (te, st) in group
        .teacher
        .params_mut()
        .iter_mut()
        .zip(group.student.params())
    {
        for (t, &s) in te.data_mut().iter_mut().zip(st.data()) {
            *t = *t * lambda + s * keep;
        }
    }
    Ok(())
}
