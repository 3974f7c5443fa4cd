import { mount } from "./app";

const app = mount(document);
app.startPolling();
