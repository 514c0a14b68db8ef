trace();
x();
y();
